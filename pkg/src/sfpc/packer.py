"""Software model of the tandem column compressor/decompressor.

A tensor is cut into groups of 64 values, each viewed as an 8x8 row-major
block. Column ``c`` of every block is fed to lane ``c``; the eight lanes
always advance by the same number of bits because every value in a row
shares one container size::

    container = exponent field + (0 if signless else 1) + mantissa width

where the exponent field is the 8-bit base for row 0 of a delta-base group
and ``w + 1`` (or 0 when ``w == 0``) for a delta or fixed-bias row of
magnitude width ``w``. Inside a lane each value is written LSB-first as
``exponent field | sign | kept mantissa bits``; a lane drains ``lane_bits``
(32 for FP32, 16 for BF16) at a time, and the data stream interleaves the
drained words lane 0..7. Width codes go to a separate metadata stream.

Container layout (little-endian)::

    magic "SFPC" | version u8 | source format u8 | variant u8 | bias u8
    | flags u8 | mantissa width or table index u16 | lane bits u8
    | ndim u8 | shape u64 * ndim | value count u64 | group count u64
    | pad count u8 | meta length u64 | data length u64
    | meta stream | data stream

``flags``: bit 0 signless, bit 1 mantissa width is an index into an
external per-tensor table, bit 2 non-finite bypass (adds one flag bit per
group to the metadata; flagged groups keep their full mantissa).
"""

from __future__ import annotations

import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import gecko
from .bitio import bytes_to_words, pack_codes, unpack_codes, words_to_bytes
from .errors import ContractError, CorruptStreamError, NonFiniteError
from .floatcore import FP32, FloatFormat, FormatKind, get_format, recompose, to_bits
from .gecko import GROUP_COLS, GROUP_ROWS, GROUP_SIZE, Variant, get_variant

MAGIC = b"SFPC"
VERSION = 1
LANES = GROUP_COLS

FLAG_SIGNLESS = 0x1
FLAG_MANTISSA_TABLE = 0x2
FLAG_BYPASS = 0x4

_FIXED = struct.Struct("<4sBBBBBHBB")
_TAIL = struct.Struct("<QQBQQ")


@dataclass(frozen=True)
class RowDescriptor:
    exp_width: int
    man_width: int
    signless: bool
    exp_field_bits: int

    @property
    def container_bits(self) -> int:
        return self.exp_field_bits + self.man_width + (0 if self.signless else 1)


@dataclass(frozen=True)
class ContainerHeader:
    source_format: FloatFormat
    variant: Variant
    bias: int
    signless: bool
    man_width: int
    shape: tuple
    value_count: int
    group_count: int
    pad_count: int
    meta_len: int
    data_len: int
    lane_bits: int
    mantissa_table: bool = False
    bypass: bool = False
    version: int = VERSION

    @property
    def flags(self) -> int:
        return (
            (FLAG_SIGNLESS if self.signless else 0)
            | (FLAG_MANTISSA_TABLE if self.mantissa_table else 0)
            | (FLAG_BYPASS if self.bypass else 0)
        )

    @property
    def size(self) -> int:
        return _FIXED.size + 8 * len(self.shape) + _TAIL.size

    def pack(self) -> bytes:
        return (
            _FIXED.pack(
                MAGIC,
                self.version,
                int(self.source_format.kind),
                int(self.variant),
                self.bias,
                self.flags,
                self.man_width,
                self.lane_bits,
                len(self.shape),
            )
            + struct.pack(f"<{len(self.shape)}Q", *self.shape)
            + _TAIL.pack(
                self.value_count, self.group_count, self.pad_count, self.meta_len, self.data_len
            )
        )

    @classmethod
    def unpack(cls, buf: bytes) -> "ContainerHeader":
        buf = bytes(buf)
        if len(buf) < _FIXED.size:
            raise CorruptStreamError("container shorter than its fixed header", len(buf))
        magic, version, fmt, variant, bias, flags, man, lane_bits, ndim = _FIXED.unpack_from(buf)
        if magic != MAGIC:
            raise CorruptStreamError(f"bad magic {magic!r}", 0)
        if version != VERSION:
            raise CorruptStreamError(f"unsupported container version {version}", 4)
        if fmt not in (0, 1) or variant not in (0, 1):
            raise CorruptStreamError("unknown source format or variant", 5)
        if flags & ~(FLAG_SIGNLESS | FLAG_MANTISSA_TABLE | FLAG_BYPASS):
            raise CorruptStreamError(f"unknown flag bits {flags:#x}", 8)
        pos = _FIXED.size
        if len(buf) < pos + 8 * ndim + _TAIL.size:
            raise CorruptStreamError("container truncated inside header", len(buf))
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        count, groups, pad, meta_len, data_len = _TAIL.unpack_from(buf, pos)
        fmt = get_format(FormatKind(fmt))
        if lane_bits not in (16, 32) or lane_bits < fmt.width:
            raise CorruptStreamError(f"invalid lane width {lane_bits}", 11)
        if not flags & FLAG_MANTISSA_TABLE and man > fmt.m:
            raise CorruptStreamError(f"mantissa width {man} exceeds {fmt.m}", 9)
        if int(np.prod(shape, dtype=np.int64)) != count:
            raise CorruptStreamError("shape does not match value count", _FIXED.size)
        if groups != -(-count // GROUP_SIZE) or pad != groups * GROUP_SIZE - count:
            raise CorruptStreamError("group/pad counts inconsistent with value count", pos)
        return cls(
            source_format=fmt,
            variant=Variant(variant),
            bias=bias,
            signless=bool(flags & FLAG_SIGNLESS),
            man_width=man,
            shape=tuple(shape),
            value_count=count,
            group_count=groups,
            pad_count=pad,
            meta_len=meta_len,
            data_len=data_len,
            lane_bits=lane_bits,
            mantissa_table=bool(flags & FLAG_MANTISSA_TABLE),
            bypass=bool(flags & FLAG_BYPASS),
            version=version,
        )


@dataclass
class PackedBlock:
    """Compressed streams for one tensor plus their bit accounting.

    ``data_bits`` and ``meta_bits`` exclude the zero padding added when the
    lanes (or the metadata stream) are flushed.
    """

    header: ContainerHeader
    meta: bytes
    data: bytes
    meta_bits: int
    data_bits: int
    row_bits: np.ndarray = field(repr=False)

    @property
    def payload_bits(self) -> int:
        return self.meta_bits + self.data_bits

    @property
    def stream_bits(self) -> int:
        return 8 * (len(self.meta) + len(self.data))

    def to_bytes(self) -> bytes:
        return self.header.pack() + self.meta + self.data


# -- planning -------------------------------------------------------------------


@dataclass
class _Plan:
    exp_field: np.ndarray  # (G, 8, 8) stored exponent field value
    exp_bits: np.ndarray  # (G, 8) exponent field width per row
    sign: np.ndarray  # (G, 8, 8)
    kept: np.ndarray  # (G, 8, 8) kept mantissa bits, right aligned
    man_bits: np.ndarray  # (G,) mantissa width per group
    codes: np.ndarray  # (G, rows with width codes)
    raw_groups: np.ndarray  # (G,) bool: non-finite bypass


def _meta_layout(groups, variant, bypass):
    per = (GROUP_ROWS - 1) if variant is Variant.DELTA_BASE else GROUP_ROWS
    lengths = np.full((groups, per + (1 if bypass else 0)), gecko.WIDTH_CODE_BITS, dtype=np.int64)
    if bypass:
        lengths[:, -1] = 1
    return lengths


def _row_exp_bits(codes, variant):
    widths = gecko.field_bits(gecko.code_width(codes))
    if variant is Variant.DELTA_BASE:
        base = np.full((codes.shape[0], 1), gecko.BASE_BITS, dtype=np.int64)
        return np.concatenate([base, widths], axis=1)
    return widths.astype(np.int64)


def _container_bits(plan_exp_bits, man_bits, signless):
    return plan_exp_bits + man_bits[:, None] + (0 if signless else 1)


def _exponent_rows(exp, variant, bias):
    """Exponents padded to whole 64-value groups, shaped ``(-1, 8)``."""
    if variant is Variant.FIXED_BIAS:
        pad = (-exp.size) % GROUP_SIZE
        return np.concatenate([exp, np.full(pad, bias, dtype=np.int64)]).reshape(-1, GROUP_COLS)
    return gecko.padded_matrix(exp, variant, bias)[0]


def _plan(bits, fmt, man_width, signless, variant, bias, allow_nonfinite):
    m = fmt.m
    n = bits.size
    pad = (-n) % GROUP_SIZE
    sign = (bits >> (fmt.width - 1)).astype(np.int64)
    exp = ((bits >> m) & 0xFF).astype(np.int64)
    man = (bits & ((1 << m) - 1)).astype(np.int64)
    if pad:
        sign = np.concatenate([sign, np.zeros(pad, np.int64)])
        man = np.concatenate([man, np.zeros(pad, np.int64)])
    rows = _exponent_rows(exp, variant, bias)
    exp = rows.reshape(-1, GROUP_ROWS, GROUP_COLS)
    groups = exp.shape[0]

    nonfinite = (exp == 0xFF).reshape(groups, -1).any(axis=1)
    if nonfinite.any() and not allow_nonfinite:
        raise NonFiniteError(f"{int(nonfinite.sum())} group(s) hold non-finite values")
    man_bits = np.where(nonfinite, m, man_width).astype(np.int64)

    deltas = gecko.row_deltas(rows, variant, bias).reshape(groups, GROUP_ROWS, GROUP_COLS)
    row_codes = gecko.width_codes(np.abs(deltas).max(axis=2))
    if variant is Variant.DELTA_BASE:
        codes = row_codes[:, 1:]
    else:
        codes = row_codes
    exp_bits = _row_exp_bits(codes, variant)

    widths = gecko.code_width(row_codes)[:, :, None]
    sm = np.abs(deltas) | ((deltas < 0).astype(np.int64) << widths)
    if variant is Variant.DELTA_BASE:
        sm[:, 0, :] = exp[:, 0, :]
    kept = man.reshape(groups, GROUP_ROWS, GROUP_COLS) >> (m - man_bits)[:, None, None]
    return _Plan(
        exp_field=sm,
        exp_bits=exp_bits,
        sign=sign.reshape(groups, GROUP_ROWS, GROUP_COLS),
        kept=kept,
        man_bits=man_bits,
        codes=codes,
        raw_groups=nonfinite,
    )


def _value_codes(plan, signless):
    s_bits = 0 if signless else 1
    eb = plan.exp_bits[:, :, None].astype(np.uint64)
    code = plan.exp_field.astype(np.uint64)
    if not signless:
        code |= plan.sign.astype(np.uint64) << eb
    code |= plan.kept.astype(np.uint64) << (eb + np.uint64(s_bits))
    return code


def _check_inputs(bits, fmt, man_width, signless):
    if bits.dtype != fmt.dtype:
        raise ContractError(f"{fmt.name} input must be {fmt.dtype} bit patterns, got {bits.dtype}")
    if isinstance(man_width, bool) or not 0 <= int(man_width) <= fmt.m:
        raise ContractError(f"mantissa width {man_width} outside [0, {fmt.m}]")
    if bits.size == 0:
        raise ContractError("cannot compress an empty tensor")
    if signless and np.any(bits >> (fmt.width - 1)):
        raise ContractError("signless compression requires non-negative values (sign bit clear)")


def _lane_bytes(lane_words, nbits, lane_bits):
    nwords = -(-nbits // lane_bits)
    raw = words_to_bytes(lane_words, nbits)
    size = nwords * lane_bits // 8
    return raw + b"\0" * (size - len(raw))


def compress(
    values,
    fmt: FloatFormat = FP32,
    man_width: int | None = None,
    signless: bool = False,
    variant=Variant.DELTA_BASE,
    *,
    bias: int = gecko.DEFAULT_BIAS,
    allow_nonfinite: bool = False,
    lane_bits: int | None = None,
    table_index: int | None = None,
    shape=None,
    jobs: int = 1,
) -> PackedBlock:
    """Pack raw FP32/BF16 bit patterns into metadata and data streams.

    ``values`` must be ``fmt.dtype`` bit patterns (use
    :func:`sfpc.floatcore.to_bits` for real values). ``man_width`` defaults
    to the full mantissa (lossless). With ``table_index`` the header records
    an index into an external per-tensor mantissa-width table instead of the
    width itself. ``jobs > 1`` spreads per-group work over threads; the
    output is byte-identical for any value.
    """
    fmt = get_format(fmt)
    variant = get_variant(variant)
    bits = np.asarray(values)
    shape = tuple(bits.shape if shape is None else shape)
    bits = bits.ravel()
    man_width = fmt.m if man_width is None else int(man_width)
    _check_inputs(bits, fmt, man_width, signless)
    if int(np.prod(shape, dtype=np.int64)) != bits.size:
        raise ContractError(f"shape {shape} does not match {bits.size} values")
    if not 0 <= bias <= 255:
        raise ContractError(f"bias {bias} outside [0, 255]")
    lane_bits = fmt.width if lane_bits is None else lane_bits
    if lane_bits not in (16, 32) or lane_bits < fmt.width:
        raise ContractError(f"lane width must be 16 or 32 and hold a {fmt.name} value")
    if table_index is not None and not 0 <= table_index < 1 << 16:
        raise ContractError("table index must fit in 16 bits")

    chunks = _chunk_bounds(bits.size, jobs)

    def work(bounds):
        lo, hi = bounds
        plan = _plan(bits[lo:hi], fmt, man_width, signless, variant, bias, allow_nonfinite)
        return plan, _value_codes(plan, signless)

    if len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(chunks[0])]

    codes = np.concatenate([p[1] for p in parts])
    exp_bits = np.concatenate([p[0].exp_bits for p in parts])
    man_bits = np.concatenate([p[0].man_bits for p in parts])
    width_codes = np.concatenate([p[0].codes for p in parts])
    raw_groups = np.concatenate([p[0].raw_groups for p in parts])
    bypass = bool(allow_nonfinite)
    groups = codes.shape[0]

    row_bits = _container_bits(exp_bits, man_bits, signless)
    lengths = np.broadcast_to(row_bits[:, :, None], codes.shape)
    lanes = []
    lane_nbits = int(row_bits.sum())
    for c in range(LANES):
        words, nb = pack_codes(codes[:, :, c].ravel(), lengths[:, :, c].ravel())
        assert nb == lane_nbits
        lanes.append(_lane_bytes(words, nb, lane_bits))
    data = _interleave(lanes, lane_bits)

    meta_lengths = _meta_layout(groups, variant, bypass)
    meta_codes = width_codes
    if bypass:
        meta_codes = np.concatenate([width_codes, raw_groups[:, None].astype(np.int64)], axis=1)
    meta_words, meta_bits = pack_codes(meta_codes.ravel(), meta_lengths.ravel())
    meta = words_to_bytes(meta_words, meta_bits)

    header = ContainerHeader(
        source_format=fmt,
        variant=variant,
        bias=bias,
        signless=bool(signless),
        man_width=man_width if table_index is None else table_index,
        shape=shape,
        value_count=bits.size,
        group_count=groups,
        pad_count=groups * GROUP_SIZE - bits.size,
        meta_len=len(meta),
        data_len=len(data),
        lane_bits=lane_bits,
        mantissa_table=table_index is not None,
        bypass=bypass,
    )
    return PackedBlock(
        header=header,
        meta=meta,
        data=data,
        meta_bits=meta_bits,
        data_bits=LANES * lane_nbits,
        row_bits=row_bits,
    )


def _chunk_bounds(n, jobs):
    groups = -(-n // GROUP_SIZE)
    jobs = max(1, min(int(jobs), groups))
    per = -(-groups // jobs)
    bounds = []
    for j in range(jobs):
        lo = j * per * GROUP_SIZE
        hi = min(n, (j + 1) * per * GROUP_SIZE)
        if lo < hi:
            bounds.append((lo, hi))
    return bounds


def _interleave(lanes, lane_bits):
    wbytes = lane_bits // 8
    stacked = np.stack([np.frombuffer(b, dtype=np.uint8).reshape(-1, wbytes) for b in lanes], axis=1)
    return stacked.tobytes()


def _deinterleave(data, lane_bits):
    wbytes = lane_bits // 8
    arr = np.frombuffer(data, dtype=np.uint8).reshape(-1, LANES, wbytes)
    return [arr[:, c, :].tobytes() for c in range(LANES)]


def _read_meta(h, meta, man_width):
    groups = h.group_count
    meta_lengths = _meta_layout(groups, h.variant, h.bypass)
    meta_bits = int(meta_lengths.sum())
    if len(meta) != (meta_bits + 7) // 8 or h.meta_len != len(meta):
        raise CorruptStreamError(
            f"metadata stream is {len(meta)} bytes, expected {(meta_bits + 7) // 8}", h.size
        )
    fields = unpack_codes(bytes_to_words(meta), meta_lengths.ravel()).astype(np.int64)
    fields = fields.reshape(groups, -1)
    if h.bypass:
        codes, raw = fields[:, :-1], fields[:, -1].astype(bool)
    else:
        codes, raw = fields, np.zeros(groups, dtype=bool)
    man_bits = np.where(raw, h.source_format.m, man_width).astype(np.int64)
    exp_bits = _row_exp_bits(codes, h.variant)
    row_bits = _container_bits(exp_bits, man_bits, h.signless)
    return codes, man_bits, exp_bits, row_bits


def decompress(block, header: ContainerHeader | None = None, mantissa_table=None) -> np.ndarray:
    """Rebuild bit patterns from a :class:`PackedBlock` (or container bytes).

    Dropped mantissa bits come back as zeros; signless tensors get sign 0.
    The result has the original shape and ``fmt.dtype``.
    """
    if isinstance(block, (bytes, bytearray, memoryview)):
        block = parse(block)
    h = header or block.header
    fmt = h.source_format
    m = fmt.m
    man_width = h.man_width
    if h.mantissa_table:
        if mantissa_table is None:
            raise ContractError(
                f"container uses mantissa table entry {h.man_width}; pass mantissa_table"
            )
        try:
            man_width = int(mantissa_table[h.man_width])
        except (KeyError, IndexError):
            raise ContractError(f"mantissa table has no entry {h.man_width}") from None
        if not 0 <= man_width <= m:
            raise ContractError(f"table mantissa width {man_width} outside [0, {m}]")

    groups = h.group_count
    codes, man_bits, exp_bits, row_bits = _read_meta(h, block.meta, man_width)
    lane_nbits = int(row_bits.sum())
    expected = LANES * (-(-lane_nbits // h.lane_bits)) * (h.lane_bits // 8)
    if len(block.data) != expected or h.data_len != len(block.data):
        raise CorruptStreamError(
            f"data stream is {len(block.data)} bytes, metadata implies {expected}",
            h.size + len(block.meta) + min(len(block.data), expected),
        )

    lengths = row_bits.ravel()
    lane_codes = []
    for lane in _deinterleave(block.data, h.lane_bits):
        lane_codes.append(unpack_codes(bytes_to_words(lane), lengths).reshape(groups, GROUP_ROWS))
    code = np.stack(lane_codes, axis=2)  # (G, 8, 8)

    eb = exp_bits[:, :, None].astype(np.uint64)
    field = (code & ((np.uint64(1) << eb) - np.uint64(1))).astype(np.int64)
    s_bits = 0 if h.signless else 1
    if h.signless:
        sign = np.zeros(code.shape, dtype=np.int64)
    else:
        sign = ((code >> eb) & np.uint64(1)).astype(np.int64)
    mb = man_bits[:, None, None].astype(np.uint64)
    kept = ((code >> (eb + np.uint64(s_bits))) & ((np.uint64(1) << mb) - np.uint64(1))).astype(
        np.int64
    )
    mantissa = kept << (m - man_bits)[:, None, None]

    widths = gecko.code_width(codes)[:, :, None]
    if h.variant is Variant.DELTA_BASE:
        field, base = field[:, 1:, :], field[:, :1, :]
    mag = field & ((1 << widths) - 1)
    neg = (field >> widths) & 1
    if np.any((neg == 1) & (mag == 0)):
        raise CorruptStreamError("negative zero exponent delta", h.size + h.meta_len)
    delta = np.where(neg == 1, -mag, mag)
    if h.variant is Variant.DELTA_BASE:
        exp = np.concatenate([base, base + delta], axis=1)
    else:
        exp = h.bias + delta
    if exp.min() < 0 or exp.max() > 255:
        raise CorruptStreamError("decoded exponent outside [0, 255]", h.size + h.meta_len)
    out = recompose((sign.ravel(), exp.ravel(), mantissa.ravel()), fmt)
    return out[: h.value_count].reshape(h.shape).astype(fmt.dtype)


# -- container serialization ---------------------------------------------------


def serialize(block: PackedBlock) -> bytes:
    return block.to_bytes()


def parse(buf) -> PackedBlock:
    """Parse container bytes; meta and data sections are sliced independently."""
    buf = bytes(buf)
    h = ContainerHeader.unpack(buf)
    start = h.size
    meta_end = start + h.meta_len
    data_end = meta_end + h.data_len
    if len(buf) < data_end:
        raise CorruptStreamError(
            f"container is {len(buf)} bytes but header declares {data_end}", len(buf)
        )
    if len(buf) > data_end:
        raise CorruptStreamError("trailing bytes after data stream", data_end)
    meta = buf[start:meta_end]
    data = buf[meta_end:data_end]
    meta_bits = int(_meta_layout(h.group_count, h.variant, h.bypass).sum())
    # a table-indexed width is unknown here; account rows at width 0
    man = 0 if h.mantissa_table else h.man_width
    _, _, _, row_bits = _read_meta(h, meta, man)
    data_bits = LANES * int(row_bits.sum()) if not h.mantissa_table else -1
    return PackedBlock(
        header=h, meta=meta, data=data, meta_bits=meta_bits, data_bits=data_bits, row_bits=row_bits
    )


def read_section(buf, name: str) -> bytes:
    """Slice one stream ("meta" or "data") out of container bytes without decoding."""
    h = ContainerHeader.unpack(buf)
    start = h.size if name == "meta" else h.size + h.meta_len
    length = h.meta_len if name == "meta" else h.data_len
    if name not in ("meta", "data"):
        raise ContractError(f"unknown section {name!r}")
    return bytes(buf[start : start + length])


# -- closed-form size accounting ------------------------------------------------


@dataclass(frozen=True)
class SizeAccount:
    """Stored bits for one tensor, split by field (lane flush padding excluded)."""

    values: int
    exponent_bits: int
    meta_bits: int
    sign_bits: int
    mantissa_bits: int
    raw_bits: int

    @property
    def total_bits(self) -> int:
        return self.exponent_bits + self.meta_bits + self.sign_bits + self.mantissa_bits

    @property
    def data_bits(self) -> int:
        return self.exponent_bits + self.sign_bits + self.mantissa_bits

    @property
    def ratio(self) -> float:
        return self.total_bits / self.raw_bits

    def __add__(self, other):
        if not isinstance(other, SizeAccount):
            return NotImplemented
        return SizeAccount(*(a + b for a, b in zip(self.astuple(), other.astuple())))

    def astuple(self):
        return (
            self.values,
            self.exponent_bits,
            self.meta_bits,
            self.sign_bits,
            self.mantissa_bits,
            self.raw_bits,
        )

    def asdict(self):
        d = dict(zip(
            ("values", "exponent_bits", "meta_bits", "sign_bits", "mantissa_bits", "raw_bits"),
            self.astuple(),
        ))
        d["total_bits"] = self.total_bits
        return d


def size_account(
    bits,
    fmt: FloatFormat = FP32,
    man_width: int | None = None,
    signless: bool = False,
    variant=Variant.DELTA_BASE,
    bias: int = gecko.DEFAULT_BIAS,
) -> SizeAccount:
    """Closed-form stream size; matches ``compress(...).payload_bits``.

    Counts every stored lane bit, padding values included, since the
    hardware emits them; only the final flush padding is left out.
    """
    fmt = get_format(fmt)
    variant = get_variant(variant)
    bits = np.asarray(bits).ravel()
    man_width = fmt.m if man_width is None else int(man_width)
    exp = ((bits >> fmt.m) & 0xFF).astype(np.int64)
    rows = _exponent_rows(exp, variant, bias)
    deltas = gecko.row_deltas(rows, variant, bias)
    codes = gecko.width_codes(np.abs(deltas).max(axis=1)).reshape(-1, GROUP_ROWS)
    if variant is Variant.DELTA_BASE:
        codes = codes[:, 1:]
    groups = codes.shape[0]
    exp_bits = int(_row_exp_bits(codes, variant).sum()) * LANES
    slots = groups * GROUP_SIZE
    return SizeAccount(
        values=bits.size,
        exponent_bits=exp_bits,
        meta_bits=int(codes.size) * gecko.WIDTH_CODE_BITS,
        sign_bits=0 if signless else slots,
        mantissa_bits=slots * man_width,
        raw_bits=bits.size * fmt.width,
    )


def row_descriptors(block_or_bits, fmt=FP32, man_width=None, signless=False, variant=Variant.DELTA_BASE):
    """Per-row :class:`RowDescriptor` list for the first group of a tensor."""
    fmt = get_format(fmt)
    variant = get_variant(variant)
    bits = np.asarray(block_or_bits).ravel()[:GROUP_SIZE]
    man_width = fmt.m if man_width is None else man_width
    rows = _exponent_rows(((bits >> fmt.m) & 0xFF).astype(np.int64), variant, gecko.DEFAULT_BIAS)
    codes = gecko.width_codes(np.abs(gecko.row_deltas(rows, variant)).max(axis=1)).reshape(1, -1)
    if variant is Variant.DELTA_BASE:
        codes = codes[:, 1:]
    eb = _row_exp_bits(codes, variant)[0]
    widths = list(gecko.code_width(codes[0]))
    if variant is Variant.DELTA_BASE:
        widths = [8] + widths
    return [RowDescriptor(int(w), man_width, bool(signless), int(e)) for w, e in zip(widths, eb)]


def js_encode(values, fmt: FloatFormat = FP32) -> int:
    """Bits used by zero-skipping storage: one flag bit per value plus full
    width for every non-zero value (+0 and -0 both count as zero)."""
    fmt = get_format(fmt)
    bits = np.asarray(values)
    if bits.dtype != fmt.dtype:
        bits = to_bits(bits, fmt)
    magnitude = bits & fmt.dtype.type((1 << (fmt.width - 1)) - 1)
    nonzero = int(np.count_nonzero(magnitude))
    return bits.size + nonzero * fmt.width


# -- file I/O ------------------------------------------------------------------


def write_container(path, block: PackedBlock) -> None:
    Path(path).write_bytes(block.to_bytes())


def read_container(path) -> PackedBlock:
    return parse(Path(path).read_bytes())


def read_tensor(path, fmt=None, shape=None):
    """Load a raw tensor file and return ``(bits, fmt, shape)``.

    ``.npy`` files carry their own dtype/shape: float32 or uint32 load as
    FP32, uint16 as BF16 bit patterns. Any other file is flat little-endian
    binary described by ``fmt``/``shape`` or a ``<path>.json`` sidecar
    holding ``{"format": "bf16", "shape": [..]}``.
    """
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path, allow_pickle=False)
        if arr.dtype == np.float32:
            arr = arr.view(np.uint32)
        if arr.dtype == np.uint32:
            found = get_format("fp32")
        elif arr.dtype == np.uint16:
            found = get_format("bf16")
        else:
            raise ContractError(f"unsupported .npy dtype {arr.dtype}")
        if fmt is not None and get_format(fmt) is not found:
            raise ContractError(f"{path} holds {found.name}, not {get_format(fmt).name}")
        return arr.astype(found.dtype).reshape(arr.shape), found, tuple(arr.shape)
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        desc = json.loads(sidecar.read_text())
        fmt = fmt or desc.get("format")
        shape = shape or desc.get("shape")
    if fmt is None:
        raise ContractError(f"cannot tell the float format of {path}; pass a format or sidecar")
    fmt = get_format(fmt)
    raw = path.read_bytes()
    itemsize = fmt.width // 8
    if len(raw) % itemsize:
        raise ContractError(f"{path} size {len(raw)} is not a multiple of {itemsize}")
    bits = np.frombuffer(raw, dtype=fmt.dtype.newbyteorder("<")).astype(fmt.dtype)
    shape = tuple(int(s) for s in shape) if shape else (bits.size,)
    if int(np.prod(shape, dtype=np.int64)) != bits.size:
        raise ContractError(f"shape {shape} does not match {bits.size} values in {path}")
    return bits.reshape(shape), fmt, shape


def write_tensor(path, bits, fmt, sidecar: bool = True) -> None:
    """Write bit patterns as ``.npy`` (by suffix) or flat binary plus sidecar."""
    path = Path(path)
    fmt = get_format(fmt)
    bits = np.asarray(bits, dtype=fmt.dtype)
    if path.suffix == ".npy":
        out = bits.view(np.float32) if fmt.kind is FormatKind.FP32 else bits
        with open(path, "wb") as fh:
            np.save(fh, out, allow_pickle=False)
        return
    path.write_bytes(bits.astype(fmt.dtype.newbyteorder("<")).tobytes())
    if sidecar:
        desc = {"format": fmt.name, "shape": list(bits.shape)}
        Path(str(path) + ".json").write_text(json.dumps(desc) + os.linesep)


def with_header(block: PackedBlock, **changes) -> PackedBlock:
    return replace(block, header=replace(block.header, **changes))


# -- scalar reference model ----------------------------------------------------


class LanePacker:
    """One column packer: a 64-bit staging register draining ``lane_bits`` words.

    Stands in for the hardware (L, R) register pair; models behaviour only.
    """

    def __init__(self, lane_bits: int = 32):
        self.lane_bits = lane_bits
        self.staging = 0
        self.fill = 0
        self.words: list[int] = []
        self.bits_in = 0

    def push(self, code: int, nbits: int) -> None:
        if code >> nbits:
            raise ValueError(f"code {code:#x} wider than {nbits} bits")
        self.staging |= code << self.fill
        self.fill += nbits
        self.bits_in += nbits
        if self.fill > 64:
            raise OverflowError("staging register overflow")
        while self.fill >= self.lane_bits:
            self.words.append(self.staging & ((1 << self.lane_bits) - 1))
            self.staging >>= self.lane_bits
            self.fill -= self.lane_bits

    def flush(self) -> None:
        if self.fill:
            self.words.append(self.staging)
            self.staging = 0
            self.fill = 0


class LaneUnpacker:
    def __init__(self, words, lane_bits: int = 32):
        self.words = list(words)
        self.lane_bits = lane_bits
        self.staging = 0
        self.fill = 0
        self.next_word = 0

    def pull(self, nbits: int) -> int:
        while self.fill < nbits:
            if self.next_word >= len(self.words):
                raise CorruptStreamError("lane exhausted", self.next_word * self.lane_bits // 8)
            self.staging |= self.words[self.next_word] << self.fill
            self.next_word += 1
            self.fill += self.lane_bits
        value = self.staging & ((1 << nbits) - 1)
        self.staging >>= nbits
        self.fill -= nbits
        return value


def reference_compress(
    values, fmt=FP32, man_width=None, signless=False, variant=Variant.DELTA_BASE,
    bias=gecko.DEFAULT_BIAS, lane_bits=None,
):
    """Value-at-a-time compressor built on the scalar exponent encoder.

    Slow; exists to cross-check :func:`compress`. Returns ``(meta, data)``.
    """
    from .bitio import BitWriter
    from .floatcore import decompose

    fmt = get_format(fmt)
    variant = get_variant(variant)
    bits = [int(v) for v in np.asarray(values).ravel()]
    man_width = fmt.m if man_width is None else man_width
    lane_bits = lane_bits or fmt.width
    lanes = [LanePacker(lane_bits) for _ in range(LANES)]
    meta = BitWriter()
    s_bits = 0 if signless else 1
    for start in range(0, len(bits), GROUP_SIZE):
        chunk = bits[start : start + GROUP_SIZE]
        triples = [decompose(v, fmt) for v in chunk]
        triples += [None] * (GROUP_SIZE - len(chunk))
        exps = [t.exponent for t in triples if t is not None]
        if variant is Variant.DELTA_BASE:
            group = gecko.make_group(exps, variant)
            enc = gecko.encode_delta(group)
            row_codes = [None] + list(enc.width_codes)
        else:
            padded = exps + [bias] * (GROUP_SIZE - len(exps))
            row_codes = [
                gecko.encode_fixed_bias(padded[r * 8 : r * 8 + 8], bias).width_codes[0]
                for r in range(GROUP_ROWS)
            ]
            group = gecko.ExponentGroup(np.array(padded), 0)
        for code in row_codes:
            if code is not None:
                meta.write(code, gecko.WIDTH_CODE_BITS)
        mat = group.matrix.astype(int)
        for r in range(GROUP_ROWS):
            for c in range(GROUP_COLS):
                t = triples[r * GROUP_COLS + c]
                sign, mant = (0, 0) if t is None else (t.sign, t.mantissa)
                e = int(mat[r, c])
                if variant is Variant.DELTA_BASE and r == 0:
                    ef, eb = e, gecko.BASE_BITS
                else:
                    ref = int(mat[0, c]) if variant is Variant.DELTA_BASE else bias
                    w = gecko.WIDTHS[row_codes[r]]
                    d = e - ref
                    ef, eb = (abs(d) | ((1 if d < 0 else 0) << w), w + 1) if w else (0, 0)
                code_val, n = ef, eb
                if s_bits:
                    code_val |= sign << n
                    n += 1
                code_val |= (mant >> (fmt.m - man_width)) << n
                n += man_width
                lanes[c].push(code_val, n)
    for lane in lanes:
        lane.flush()
    nwords = len(lanes[0].words)
    assert all(len(l.words) == nwords for l in lanes), "lanes fell out of tandem"
    data = b"".join(
        lanes[c].words[k].to_bytes(lane_bits // 8, "little")
        for k in range(nwords)
        for c in range(LANES)
    )
    return meta.getvalue(), data


def reference_decompress(block: PackedBlock, mantissa_table=None) -> np.ndarray:
    """Value-at-a-time decompressor driving one :class:`LaneUnpacker` per lane."""
    from .bitio import BitReader
    from .floatcore import recompose as _recompose

    h = block.header
    fmt = h.source_format
    man_width = h.man_width if not h.mantissa_table else int(mantissa_table[h.man_width])
    wbytes = h.lane_bits // 8
    words = [[] for _ in range(LANES)]
    for k in range(0, len(block.data), wbytes * LANES):
        for c in range(LANES):
            off = k + c * wbytes
            words[c].append(int.from_bytes(block.data[off : off + wbytes], "little"))
    lanes = [LaneUnpacker(w, h.lane_bits) for w in words]
    meta = BitReader(block.meta)
    s_bits = 0 if h.signless else 1
    out = []
    for _ in range(h.group_count):
        if h.variant is Variant.DELTA_BASE:
            codes = [None] + [meta.read(3) for _ in range(GROUP_ROWS - 1)]
        else:
            codes = [meta.read(3) for _ in range(GROUP_ROWS)]
        raw = meta.read(1) if h.bypass else 0
        mw = fmt.m if raw else man_width
        bases = [0] * GROUP_COLS
        for r in range(GROUP_ROWS):
            for c in range(GROUP_COLS):
                lane = lanes[c]
                if codes[r] is None:
                    e = bases[c] = lane.pull(gecko.BASE_BITS)
                else:
                    w = gecko.WIDTHS[codes[r]]
                    ref = bases[c] if h.variant is Variant.DELTA_BASE else h.bias
                    if w:
                        mag = lane.pull(w)
                        e = ref - mag if lane.pull(1) else ref + mag
                    else:
                        e = ref
                sign = lane.pull(1) if s_bits else 0
                mant = lane.pull(mw) << (fmt.m - mw)
                out.append(_recompose((sign, e, mant), fmt))
    arr = np.array(out[: h.value_count], dtype=fmt.dtype)
    return arr.reshape(h.shape)
