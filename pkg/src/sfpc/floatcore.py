"""FP32 / BFloat16 field access and mantissa truncation.

Values travel through this package as raw bit patterns: ``uint32`` arrays
for FP32 and ``uint16`` arrays for BF16 (numpy has no native bfloat16).
Every operation here accepts either a Python ``int`` or a numpy integer
array and returns the same kind.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ContractError, NonFiniteError


class FormatKind(enum.IntEnum):
    FP32 = 0
    BF16 = 1


@dataclass(frozen=True)
class FloatFormat:
    kind: FormatKind
    exponent_bits: int
    mantissa_bits: int
    bias: int = 127

    def __post_init__(self):
        if self.exponent_bits != 8:
            raise ContractError("only 8-bit exponent formats are supported")
        expected = {FormatKind.FP32: 23, FormatKind.BF16: 7}[self.kind]
        if self.mantissa_bits != expected:
            raise ContractError(
                f"{self.kind.name} has {expected} mantissa bits, got {self.mantissa_bits}"
            )

    @property
    def m(self) -> int:
        return self.mantissa_bits

    @property
    def width(self) -> int:
        return 1 + self.exponent_bits + self.mantissa_bits

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.uint32 if self.kind is FormatKind.FP32 else np.uint16)

    @property
    def name(self) -> str:
        return self.kind.name.lower()

    @property
    def exp_max(self) -> int:
        return (1 << self.exponent_bits) - 1

    def __repr__(self):
        return f"FloatFormat({self.kind.name})"


FP32 = FloatFormat(FormatKind.FP32, 8, 23)
BF16 = FloatFormat(FormatKind.BF16, 8, 7)


def get_format(name) -> FloatFormat:
    """Look up a format by name (``"fp32"``/``"bf16"``), kind, or pass-through."""
    if isinstance(name, FloatFormat):
        return name
    if isinstance(name, (FormatKind, int)) and not isinstance(name, bool):
        return FP32 if FormatKind(name) is FormatKind.FP32 else BF16
    key = str(name).strip().lower().replace("_", "").replace("-", "")
    if key in ("fp32", "float32", "f32"):
        return FP32
    if key in ("bf16", "bfloat16"):
        return BF16
    raise ContractError(f"unknown float format {name!r}")


class FloatTriple(NamedTuple):
    sign: int
    exponent: int
    mantissa: int


def decompose(value, fmt: FloatFormat = FP32) -> FloatTriple:
    """Split a raw bit pattern (or array of them) into sign/exponent/mantissa.

    NaN payloads are returned untouched.
    """
    m = fmt.m
    if isinstance(value, (int, np.integer)):
        value = int(value)
        if not 0 <= value < (1 << fmt.width):
            raise ContractError(f"{value:#x} is not a {fmt.width}-bit pattern")
        return FloatTriple(value >> (fmt.width - 1), (value >> m) & 0xFF, value & ((1 << m) - 1))
    bits = np.asarray(value)
    if bits.dtype != fmt.dtype:
        raise ContractError(f"expected {fmt.dtype} bit patterns for {fmt.name}, got {bits.dtype}")
    sign = (bits >> (fmt.width - 1)).astype(np.uint8)
    exponent = ((bits >> m) & 0xFF).astype(np.uint8)
    mantissa = (bits & ((1 << m) - 1)).astype(fmt.dtype)
    return FloatTriple(sign, exponent, mantissa)


def recompose(t: FloatTriple, fmt: FloatFormat = FP32):
    """Inverse of :func:`decompose`."""
    sign, exponent, mantissa = t
    m = fmt.m
    if all(isinstance(f, (int, np.integer)) for f in t):
        sign, exponent, mantissa = int(sign), int(exponent), int(mantissa)
        if sign not in (0, 1):
            raise ContractError(f"sign must be 0 or 1, got {sign}")
        if not 0 <= exponent <= 0xFF:
            raise ContractError(f"exponent {exponent} outside [0, 255]")
        if not 0 <= mantissa < (1 << m):
            raise ContractError(f"mantissa {mantissa:#x} does not fit in {m} bits")
        return (sign << (fmt.width - 1)) | (exponent << m) | mantissa
    dt = fmt.dtype
    sign = np.asarray(sign)
    exponent = np.asarray(exponent)
    mantissa = np.asarray(mantissa)
    if np.any(sign > 1) or np.any(exponent > 0xFF) or np.any(mantissa >> m):
        raise ContractError("field out of range for " + fmt.name)
    return (
        (sign.astype(dt) << dt.type(fmt.width - 1))
        | (exponent.astype(dt) << dt.type(m))
        | mantissa.astype(dt)
    )


def _check_width(n, fmt):
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
        raise ContractError(f"bitlength must be an integer, got {n!r}")
    if not 0 <= n <= fmt.m:
        raise ContractError(f"bitlength {n} outside [0, {fmt.m}]")
    return int(n)


def mantissa_mask(n: int, fmt: FloatFormat) -> int:
    """Mask keeping the top ``n`` of ``fmt.m`` mantissa bits."""
    n = _check_width(n, fmt)
    return ((1 << n) - 1) << (fmt.m - n)


def quantize_mantissa(M, n: int, fmt: FloatFormat = FP32):
    """Keep the ``n`` most significant mantissa bits, zero the rest.

    ``Q(M, n) = M & ((2**n - 1) << (m - n))``; truncation, never rounding.
    """
    mask = mantissa_mask(n, fmt)
    if isinstance(M, (int, np.integer)):
        M = int(M)
        if not 0 <= M < (1 << fmt.m):
            raise ContractError(f"mantissa {M:#x} does not fit in {fmt.m} bits")
        return M & mask
    M = np.asarray(M)
    return M & M.dtype.type(mask)


def sample_bitlength(n: float, rng: np.random.Generator, fmt: FloatFormat = FP32) -> int:
    """Draw the integer bitlength used for one stochastic quantization.

    Returns ``floor(n)`` with probability ``1 - frac(n)`` and ``floor(n) + 1``
    otherwise. ``n`` is clipped to ``[0, m]`` first. Integer ``n`` consumes no
    randomness, so full-width runs stay bit-identical to unquantized ones.
    """
    if not math.isfinite(n):
        raise ContractError(f"bitlength must be finite, got {n}")
    n = min(max(float(n), 0.0), float(fmt.m))
    lo = math.floor(n)
    frac = n - lo
    if frac == 0.0:
        return lo
    return lo + 1 if rng.random() < frac else lo


def quantize_stochastic(M, n: float, fmt: FloatFormat, rng: np.random.Generator):
    """Stochastic mantissa quantization for a real-valued bitlength.

    One random draw per call: the whole of ``M`` (a scalar or a tensor's
    worth of mantissas) shares the sampled integer bitlength.
    """
    if n < 0:
        raise ContractError(f"bitlength must be clipped to >= 0 by the caller, got {n}")
    return quantize_mantissa(M, sample_bitlength(n, rng, fmt), fmt)


def is_nonfinite(bits, fmt: FloatFormat = FP32):
    """True where the exponent field is all ones (Inf or NaN)."""
    if isinstance(bits, (int, np.integer)):
        return decompose(bits, fmt).exponent == 0xFF
    return ((np.asarray(bits) >> fmt.m) & 0xFF) == 0xFF


def truncate_bits(bits, n: int, fmt: FloatFormat = FP32, allow_nonfinite: bool = False):
    """Apply mantissa truncation to whole bit patterns.

    Non-finite patterns raise :class:`NonFiniteError` unless
    ``allow_nonfinite`` is set, in which case they pass through at full
    width (truncating a NaN payload to zero would turn it into an Inf).
    Subnormals are truncated like any other value.
    """
    mask = mantissa_mask(n, fmt)
    full = (1 << fmt.width) - 1
    keep = full & ~((1 << fmt.m) - 1) | mask
    if isinstance(bits, (int, np.integer)):
        bits = int(bits)
        if is_nonfinite(bits, fmt):
            if not allow_nonfinite:
                raise NonFiniteError(f"non-finite value {bits:#x} cannot be quantized")
            return bits
        return bits & keep
    bits = np.asarray(bits)
    if bits.dtype != fmt.dtype:
        raise ContractError(f"expected {fmt.dtype} bit patterns for {fmt.name}, got {bits.dtype}")
    out = bits & bits.dtype.type(keep)
    bad = is_nonfinite(bits, fmt)
    if bad.any():
        if not allow_nonfinite:
            raise NonFiniteError(f"{int(bad.sum())} non-finite value(s) cannot be quantized")
        out = np.where(bad, bits, out)
    return out


# -- value <-> bit pattern conversion -------------------------------------------


def float32_to_bf16_bits(x) -> np.ndarray:
    """Round float values to BF16 (round-to-nearest-even) and return uint16 bits."""
    f = np.asarray(x, dtype=np.float32)
    u = f.view(np.uint32).astype(np.uint64)
    rounded = (u + 0x7FFF + ((u >> 16) & 1)) >> 16
    nan = np.isnan(f)
    if nan.any():
        rounded = np.where(nan, (u >> 16) | 0x40, rounded)
    return rounded.astype(np.uint16)


def bf16_bits_to_float32(bits) -> np.ndarray:
    return (np.asarray(bits, dtype=np.uint16).astype(np.uint32) << np.uint32(16)).view(np.float32)


def to_bits(x, fmt: FloatFormat) -> np.ndarray:
    """Round real values into ``fmt`` and return their bit patterns."""
    fmt = get_format(fmt)
    if fmt.kind is FormatKind.FP32:
        return np.ascontiguousarray(np.asarray(x, dtype=np.float32)).view(np.uint32)
    return float32_to_bf16_bits(x)


def from_bits(bits, fmt: FloatFormat) -> np.ndarray:
    """Interpret bit patterns of ``fmt`` as float32 values."""
    fmt = get_format(fmt)
    bits = np.ascontiguousarray(bits, dtype=fmt.dtype)
    if fmt.kind is FormatKind.FP32:
        return bits.view(np.float32)
    return bf16_bits_to_float32(bits)


def value_scale(exponent, fmt: FloatFormat):
    """Weight of one mantissa LSB for the given exponent field(s).

    Normal numbers scale by ``2**(E - bias - m)``; subnormals (E == 0) use the
    minimum normal exponent ``1 - bias``.
    """
    e = np.maximum(np.asarray(exponent, dtype=np.int64), 1)
    return np.ldexp(1.0, e - fmt.bias - fmt.m)


def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator; accepts an int or a SeedSequence."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def split_seed(seed, n: int) -> list:
    """Derive ``n`` independent child seed sequences from ``seed``."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return seed.spawn(n)
