"""Lossless exponent codec.

Two layouts are supported:

``DELTA_BASE``
    64 exponents viewed as an 8x8 row-major matrix. Row 0 holds one 8-bit
    base per column; rows 1-7 hold ``exponent - base`` in sign-magnitude.
    Each of those rows carries a 3-bit width code sized for its largest
    magnitude, and a zero-width row stores nothing at all.

``FIXED_BIAS``
    8 exponents stored as sign-magnitude ``exponent - bias`` behind a single
    3-bit width code.

Width codes 0-6 mean that many magnitude bits; code 7 means 8 bits, so a
delta between any two 8-bit exponents always fits. A value stored with
magnitude width ``w > 0`` occupies ``w`` magnitude bits followed by one sign
bit (LSB-first, column 0 first).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .bitio import BitReader, BitWriter
from .errors import ContractError, CorruptStreamError

GROUP_ROWS = 8
GROUP_COLS = 8
GROUP_SIZE = GROUP_ROWS * GROUP_COLS
FIXED_GROUP_SIZE = 8
BASE_BITS = 8
WIDTH_CODE_BITS = 3
DEFAULT_BIAS = 127
PAD_EXPONENT = 127

WIDTHS = (0, 1, 2, 3, 4, 5, 6, 8)
_WIDTH_TABLE = np.array(WIDTHS, dtype=np.int64)
_CODE_FOR_BITLEN = np.array([0, 1, 2, 3, 4, 5, 6, 7, 7], dtype=np.int64)
_BITLEN = np.array([i.bit_length() for i in range(256)], dtype=np.int64)


class Variant(enum.IntEnum):
    DELTA_BASE = 0
    FIXED_BIAS = 1


def get_variant(v) -> Variant:
    if isinstance(v, Variant):
        return v
    if isinstance(v, (int, np.integer)):
        return Variant(int(v))
    key = str(v).lower().replace("-", "").replace("_", "")
    if key in ("delta", "deltabase", "base"):
        return Variant.DELTA_BASE
    if key in ("fixed", "fixedbias", "bias"):
        return Variant.FIXED_BIAS
    raise ContractError(f"unknown exponent variant {v!r}")


def width_code(magnitude: int) -> int:
    """Smallest width code whose width holds ``magnitude`` (leading-one detect)."""
    if not 0 <= magnitude <= 255:
        raise ContractError(f"magnitude {magnitude} outside [0, 255]")
    return int(_CODE_FOR_BITLEN[magnitude.bit_length()])


def width_codes(magnitudes) -> np.ndarray:
    """Vectorised :func:`width_code` over an integer array."""
    mags = np.asarray(magnitudes, dtype=np.int64)
    if mags.size and (mags.min() < 0 or mags.max() > 255):
        raise ContractError("magnitudes must lie in [0, 255]")
    return _CODE_FOR_BITLEN[_BITLEN[mags]]


def code_width(code) -> np.ndarray | int:
    if isinstance(code, (int, np.integer)):
        return WIDTHS[int(code)]
    return _WIDTH_TABLE[np.asarray(code, dtype=np.int64)]


def field_bits(width):
    """Stored bits per value for magnitude width ``width`` (sign only if w > 0)."""
    if isinstance(width, (int, np.integer)):
        return width + 1 if width > 0 else 0
    width = np.asarray(width)
    return np.where(width > 0, width + 1, 0)


@dataclass
class ExponentGroup:
    """A block of 8-bit exponents; trailing ``pad_count`` entries are padding."""

    exponents: np.ndarray
    pad_count: int = 0

    def __post_init__(self):
        e = np.asarray(self.exponents)
        if e.size not in (GROUP_SIZE, FIXED_GROUP_SIZE):
            raise ContractError(f"a group holds 64 or 8 exponents, got {e.size}")
        if e.min() < 0 or e.max() > 255:
            raise ContractError("exponents must lie in [0, 255]")
        if not 0 <= self.pad_count < e.size:
            raise ContractError(f"pad_count {self.pad_count} invalid for {e.size} exponents")
        self.exponents = e.astype(np.uint8).ravel()

    @property
    def matrix(self) -> np.ndarray:
        return self.exponents.reshape(-1, GROUP_COLS)

    @property
    def values(self) -> np.ndarray:
        """The real (non-padding) exponents."""
        return self.exponents[: self.exponents.size - self.pad_count]

    def __eq__(self, other):
        if not isinstance(other, ExponentGroup):
            return NotImplemented
        return self.pad_count == other.pad_count and np.array_equal(
            self.exponents, other.exponents
        )


def make_group(exponents, variant=Variant.DELTA_BASE, bias: int = DEFAULT_BIAS) -> ExponentGroup:
    """Build a (possibly short) group, padding so padding encodes as zero deltas."""
    variant = get_variant(variant)
    e = np.asarray(exponents, dtype=np.int64).ravel()
    size = GROUP_SIZE if variant is Variant.DELTA_BASE else FIXED_GROUP_SIZE
    if not 0 < e.size <= size:
        raise ContractError(f"need 1..{size} exponents, got {e.size}")
    pad = size - e.size
    if variant is Variant.FIXED_BIAS:
        full = np.concatenate([e, np.full(pad, bias, dtype=np.int64)])
    else:
        full = np.full(size, PAD_EXPONENT, dtype=np.int64)
        full[: e.size] = e
        mat = full.reshape(GROUP_ROWS, GROUP_COLS)
        # rows below the first copy their column base
        flat_idx = np.arange(size).reshape(GROUP_ROWS, GROUP_COLS)
        mat[:] = np.where(flat_idx >= e.size, mat[0][None, :], mat)
        full = mat.ravel()
    return ExponentGroup(full, pad)


def split_groups(exponents, variant=Variant.DELTA_BASE, bias: int = DEFAULT_BIAS):
    """Chop a flat exponent sequence into groups, padding the tail."""
    variant = get_variant(variant)
    e = np.asarray(exponents).ravel()
    size = GROUP_SIZE if variant is Variant.DELTA_BASE else FIXED_GROUP_SIZE
    return [make_group(e[i : i + size], variant, bias) for i in range(0, e.size, size)]


@dataclass(frozen=True)
class GeckoEncoding:
    variant: Variant
    width_codes: tuple
    payload: bytes
    payload_bits: int
    bases: tuple = ()
    bias: int | None = None
    pad_count: int = 0

    @property
    def n_values(self) -> int:
        return GROUP_SIZE if self.variant is Variant.DELTA_BASE else FIXED_GROUP_SIZE

    @property
    def metadata_bits(self) -> int:
        return WIDTH_CODE_BITS * len(self.width_codes)

    @property
    def compressed_bits(self) -> int:
        return BASE_BITS * len(self.bases) + self.payload_bits

    @property
    def total_bits(self) -> int:
        return self.metadata_bits + self.compressed_bits


@dataclass(frozen=True)
class RatioAccount:
    """Bit account for the ``(M + C) / O`` compression ratio.

    ``M`` counts width-code metadata, ``C`` the stored bases and
    sign/magnitude bits, ``O`` the 8-bit original exponents.
    """

    M: int
    C: int
    O: int

    @property
    def ratio(self) -> float:
        return (self.M + self.C) / self.O if self.O else float("nan")

    @property
    def bits(self) -> int:
        return self.M + self.C

    def __add__(self, other):
        if not isinstance(other, RatioAccount):
            return NotImplemented
        return RatioAccount(self.M + other.M, self.C + other.C, self.O + other.O)

    def __radd__(self, other):
        if other == 0:
            return self
        return self.__add__(other)


def _write_row(writer, deltas, code):
    w = WIDTHS[code]
    if w == 0:
        return
    for d in deltas:
        d = int(d)
        writer.write(abs(d), w)
        writer.write(1 if d < 0 else 0, 1)


def encode_delta(group: ExponentGroup) -> GeckoEncoding:
    if not isinstance(group, ExponentGroup):
        group = make_group(group, Variant.DELTA_BASE)
    if group.exponents.size != GROUP_SIZE:
        raise ContractError("delta-base encoding needs a 64-exponent group")
    mat = group.matrix.astype(np.int64)
    bases = mat[0]
    writer = BitWriter()
    codes = []
    for row in mat[1:]:
        deltas = row - bases
        code = width_code(int(np.abs(deltas).max()))
        codes.append(code)
        _write_row(writer, deltas, code)
    return GeckoEncoding(
        variant=Variant.DELTA_BASE,
        width_codes=tuple(codes),
        payload=writer.getvalue(),
        payload_bits=writer.nbits,
        bases=tuple(int(b) for b in bases),
        pad_count=group.pad_count,
    )


def encode_fixed_bias(exponents, b: int = DEFAULT_BIAS) -> GeckoEncoding:
    if not 0 <= b <= 255:
        raise ContractError(f"bias {b} outside [0, 255]")
    group = exponents if isinstance(exponents, ExponentGroup) else make_group(
        exponents, Variant.FIXED_BIAS, b
    )
    if group.exponents.size != FIXED_GROUP_SIZE:
        raise ContractError("fixed-bias encoding needs an 8-exponent group")
    deltas = group.exponents.astype(np.int64) - b
    code = width_code(int(np.abs(deltas).max()))
    writer = BitWriter()
    _write_row(writer, deltas, code)
    return GeckoEncoding(
        variant=Variant.FIXED_BIAS,
        width_codes=(code,),
        payload=writer.getvalue(),
        payload_bits=writer.nbits,
        bias=b,
        pad_count=group.pad_count,
    )


def encode(group: ExponentGroup, variant=Variant.DELTA_BASE, bias: int = DEFAULT_BIAS):
    if get_variant(variant) is Variant.DELTA_BASE:
        return encode_delta(group)
    return encode_fixed_bias(group, bias)


def _read_row(reader, code, ref):
    w = WIDTHS[code]
    if w == 0:
        return [int(r) for r in ref]
    out = []
    for r in ref:
        mag = reader.read(w)
        neg = reader.read(1)
        if neg and mag == 0:
            raise CorruptStreamError("negative zero delta in exponent payload", reader.pos // 8)
        out.append(int(r) + (-mag if neg else mag))
    return out


def decode(enc: GeckoEncoding) -> ExponentGroup:
    if any(not 0 <= c < len(WIDTHS) for c in enc.width_codes):
        raise CorruptStreamError("width code out of range")
    expected = sum(GROUP_COLS * field_bits(WIDTHS[c]) for c in enc.width_codes)
    if expected != enc.payload_bits or len(enc.payload) != (expected + 7) // 8:
        raise CorruptStreamError(
            f"payload holds {enc.payload_bits} bits in {len(enc.payload)} bytes, "
            f"width codes imply {expected}"
        )
    reader = BitReader(enc.payload, enc.payload_bits)
    if enc.variant is Variant.DELTA_BASE:
        if len(enc.bases) != GROUP_COLS or len(enc.width_codes) != GROUP_ROWS - 1:
            raise CorruptStreamError("delta-base encoding needs 8 bases and 7 width codes")
        rows = [list(enc.bases)]
        for code in enc.width_codes:
            rows.append(_read_row(reader, code, enc.bases))
        values = np.array(rows).ravel()
    else:
        if len(enc.width_codes) != 1 or enc.bias is None:
            raise CorruptStreamError("fixed-bias encoding needs one width code and a bias")
        values = np.array(_read_row(reader, enc.width_codes[0], [enc.bias] * FIXED_GROUP_SIZE))
    if values.min() < 0 or values.max() > 255:
        raise CorruptStreamError("decoded exponent outside [0, 255]")
    return ExponentGroup(values, enc.pad_count)


def ratio(enc: GeckoEncoding) -> RatioAccount:
    real = enc.n_values - enc.pad_count
    return RatioAccount(M=enc.metadata_bits, C=enc.compressed_bits, O=BASE_BITS * real)


def encode_tensor(exponents, variant=Variant.DELTA_BASE, bias: int = DEFAULT_BIAS):
    """Encode a flat exponent sequence group by group."""
    return [encode(g, variant, bias) for g in split_groups(exponents, variant, bias)]


def decode_tensor(encodings) -> np.ndarray:
    return np.concatenate([decode(e).values for e in encodings]).astype(np.uint8)


def tensor_account(exponents, variant=Variant.DELTA_BASE, bias: int = DEFAULT_BIAS) -> RatioAccount:
    """Closed-form ratio account for a whole exponent tensor (vectorised)."""
    variant = get_variant(variant)
    codes, groups, pad = row_width_codes(exponents, variant, bias)
    n_codes = codes.size
    payload = int((GROUP_COLS * field_bits(code_width(codes))).sum())
    bases = BASE_BITS * GROUP_COLS * groups if variant is Variant.DELTA_BASE else 0
    n = np.asarray(exponents).size
    return RatioAccount(M=WIDTH_CODE_BITS * n_codes, C=bases + payload, O=BASE_BITS * n)


def padded_matrix(exponents, variant=Variant.DELTA_BASE, bias: int = DEFAULT_BIAS):
    """Return ``(rows, pad)``: exponents padded and reshaped to ``(-1, 8)``.

    For DELTA_BASE the rows come in blocks of 8 per group; for FIXED_BIAS
    every row is its own group.
    """
    variant = get_variant(variant)
    e = np.asarray(exponents).ravel().astype(np.int64)
    size = GROUP_SIZE if variant is Variant.DELTA_BASE else FIXED_GROUP_SIZE
    pad = (-e.size) % size
    if not pad:
        return e.reshape(-1, GROUP_COLS), 0
    if variant is Variant.FIXED_BIAS:
        return np.concatenate([e, np.full(pad, bias)]).reshape(-1, GROUP_COLS), pad
    tail = make_group(e[e.size - (size - pad) :], variant).exponents.astype(np.int64)
    return np.concatenate([e[: e.size - (size - pad)], tail]).reshape(-1, GROUP_COLS), pad


def row_deltas(rows, variant=Variant.DELTA_BASE, bias: int = DEFAULT_BIAS):
    """Signed deltas for every row of :func:`padded_matrix` output.

    DELTA_BASE row 0 of each group is returned as zeros (it stores bases).
    """
    variant = get_variant(variant)
    if variant is Variant.FIXED_BIAS:
        return rows - bias
    g = rows.reshape(-1, GROUP_ROWS, GROUP_COLS)
    d = g - g[:, :1, :]
    return d.reshape(-1, GROUP_COLS)


def row_width_codes(exponents, variant=Variant.DELTA_BASE, bias: int = DEFAULT_BIAS):
    """Width code per coded row: ``(codes[groups, rows_per_group], groups, pad)``."""
    variant = get_variant(variant)
    rows, pad = padded_matrix(exponents, variant, bias)
    codes = width_codes(np.abs(row_deltas(rows, variant, bias)).max(axis=1))
    if variant is Variant.DELTA_BASE:
        codes = codes.reshape(-1, GROUP_ROWS)[:, 1:]
        return codes, codes.shape[0], pad
    return codes.reshape(-1, 1), codes.size, pad
