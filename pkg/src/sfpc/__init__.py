"""Floating-point tensor compression: a lossless exponent codec, mantissa
truncation controllers, a bit-packing container and a roofline model."""

from .errors import (
    ConfigError,
    ContractError,
    CorruptStreamError,
    DivergenceError,
    NonFiniteError,
    SFPError,
)
from .floatcore import BF16, FP32, FloatFormat, get_format
from .packer import compress, decompress, parse, serialize

__version__ = "0.1.0"

__all__ = [
    "BF16",
    "FP32",
    "ConfigError",
    "ContractError",
    "CorruptStreamError",
    "DivergenceError",
    "FloatFormat",
    "NonFiniteError",
    "SFPError",
    "compress",
    "decompress",
    "get_format",
    "parse",
    "serialize",
]
