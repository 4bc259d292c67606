"""LSB-first bit streams.

Bit ``i`` of a stream lives in byte ``i // 8`` at bit position ``i % 8``;
a field of width ``w`` written at stream position ``p`` puts its least
significant bit at ``p``. :class:`BitWriter` / :class:`BitReader` are the
straightforward scalar versions; :func:`pack_codes` / :func:`unpack_codes`
do the same thing for whole arrays of variable-length codes (up to 64 bits
each) with numpy.
"""

from __future__ import annotations

import numpy as np

from .errors import CorruptStreamError

_U64 = np.uint64


class BitWriter:
    def __init__(self):
        self._acc = 0
        self.nbits = 0

    def write(self, value: int, width: int) -> None:
        if width < 0 or value < 0 or value >> width:
            raise ValueError(f"value {value} does not fit in {width} bits")
        self._acc |= value << self.nbits
        self.nbits += width

    def getvalue(self) -> bytes:
        return self._acc.to_bytes((self.nbits + 7) // 8, "little")

    def as_int(self) -> int:
        return self._acc


class BitReader:
    def __init__(self, data: bytes, nbits: int | None = None):
        self._acc = int.from_bytes(bytes(data), "little")
        self.nbits = len(data) * 8 if nbits is None else nbits
        self.pos = 0

    def read(self, width: int) -> int:
        if self.pos + width > self.nbits:
            raise CorruptStreamError(
                f"read of {width} bits past end of {self.nbits}-bit stream", self.pos // 8
            )
        value = (self._acc >> self.pos) & ((1 << width) - 1)
        self.pos += width
        return value

    @property
    def remaining(self) -> int:
        return self.nbits - self.pos


def _low_mask(lengths):
    lengths = np.asarray(lengths, dtype=_U64)
    # (1 << 64) overflows, so build the 64-bit case separately
    full = lengths >= 64
    safe = np.where(full, 0, lengths).astype(_U64)
    return np.where(full, ~_U64(0), (_U64(1) << safe) - _U64(1))


def pack_codes(codes, lengths) -> tuple[np.ndarray, int]:
    """Concatenate variable-length codes LSB-first.

    Returns ``(words, nbits)`` where ``words`` is a little-endian ``uint64``
    array holding the stream. Codes must already fit their lengths.
    """
    codes = np.asarray(codes, dtype=_U64).ravel()
    lengths = np.asarray(lengths, dtype=np.int64).ravel()
    if codes.shape != lengths.shape:
        raise ValueError("codes and lengths differ in shape")
    if lengths.size and (lengths.min() < 0 or lengths.max() > 64):
        raise ValueError("code lengths must lie in [0, 64]")
    ends = np.cumsum(lengths)
    nbits = int(ends[-1]) if ends.size else 0
    starts = ends - lengths
    words = np.zeros(nbits // 64 + 2, dtype=_U64)
    live = lengths > 0
    codes, starts = codes[live], starts[live]
    word = starts >> 6
    shift = (starts & 63).astype(_U64)
    np.add.at(words, word, codes << shift)
    spill = shift > 0
    hi = np.where(spill, codes >> np.where(spill, _U64(64) - shift, _U64(0)), _U64(0))
    np.add.at(words, word + 1, hi)
    return words[: (nbits + 63) // 64], nbits


def unpack_codes(words, lengths, start: int = 0) -> np.ndarray:
    """Inverse of :func:`pack_codes`: slice consecutive codes out of ``words``."""
    words = np.asarray(words, dtype=_U64)
    lengths = np.asarray(lengths, dtype=np.int64).ravel()
    ends = np.cumsum(lengths) + start
    starts = ends - lengths
    need = int(ends[-1]) if ends.size else start
    if need > words.size * 64:
        raise CorruptStreamError(
            f"stream holds {words.size * 64} bits but {need} are required", words.size * 8
        )
    padded = np.concatenate([words, np.zeros(2, dtype=_U64)])
    word = starts >> 6
    shift = (starts & 63).astype(_U64)
    lo = padded[word] >> shift
    spill = shift > 0
    hi = np.where(spill, padded[word + 1] << np.where(spill, _U64(64) - shift, _U64(0)), _U64(0))
    return (lo | hi) & _low_mask(lengths)


def words_to_bytes(words, nbits: int) -> bytes:
    """Serialize a packed stream, rounding its length up to whole bytes."""
    raw = np.asarray(words, dtype="<u8").tobytes()
    return raw[: (nbits + 7) // 8]


def bytes_to_words(data) -> np.ndarray:
    data = bytes(data)
    pad = (-len(data)) % 8
    return np.frombuffer(data + b"\0" * pad, dtype="<u8").astype(_U64)
