"""Byte-oriented renormalizing range coder over fixed frequency tables.

32-bit state, 16-bit frequency precision. The encoder releases a byte
whenever the top byte of ``low`` and ``low + range`` agree; when the range
underflows below 2**16 while straddling a byte boundary it truncates the
range to the boundary and releases anyway. Tables are static, with every
symbol's frequency >= 1 and frequencies summing to exactly 2**16, so
encoder and decoder walk identical integer state with no side
information beyond the tables themselves. One stream may interleave
symbols from several tables as long as both sides switch tables at the
same points.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DecodeError

PRECISION = 32
TOP = 1 << (PRECISION - 8)
BOTTOM = 1 << (PRECISION - 16)
MASK = (1 << PRECISION) - 1
TOTAL = BOTTOM  # frequency tables always sum to this


class FrequencyTable:
    """Integer frequency table over a contiguous integer alphabet.

    Args:
        probs: positive weights for symbols offset, offset+1, ... They are
            scaled to integer frequencies summing to exactly 2**16 with
            every entry >= 1.
        offset: integer value of the first symbol.
    """

    def __init__(self, probs: np.ndarray, offset: int = 0):
        p = np.asarray(probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 1:
            raise ContractError("probs must be a non-empty 1-D array")
        if p.size > TOTAL:
            raise ContractError("alphabet larger than the frequency total")
        if np.any(p <= 0) or not np.all(np.isfinite(p)):
            raise ContractError("probabilities must be positive and finite")
        p = p / p.sum()
        freq = np.maximum(1, np.floor(p * TOTAL).astype(np.int64))
        # Deterministically repair rounding drift so the total is exact:
        # surplus goes to the most probable symbol, deficit is taken from
        # the largest frequencies while keeping every entry >= 1.
        diff = TOTAL - int(freq.sum())
        if diff > 0:
            freq[int(np.argmax(p))] += diff
        while diff < 0:
            i = int(np.argmax(freq))
            take = min(int(freq[i]) - 1, -diff)
            if take <= 0:
                raise ContractError("cannot fit alphabet into frequency total")
            freq[i] -= take
            diff += take
        self.offset = int(offset)
        self.freq = freq
        self.cum = np.concatenate([[0], np.cumsum(freq)]).astype(np.int64)

    @property
    def size(self) -> int:
        return int(self.freq.size)

    def bits(self, values: np.ndarray) -> float:
        """Ideal code length of values under the table's own probabilities."""
        idx = np.asarray(values).reshape(-1) - self.offset
        if idx.size and (idx.min() < 0 or idx.max() >= self.size):
            raise ContractError("value outside table alphabet")
        return float(np.sum(np.log2(TOTAL) - np.log2(self.freq[idx])))


class RangeEncoder:
    """Streaming encoder; call ``encode`` any number of times, then ``finish``."""

    def __init__(self) -> None:
        self._low = 0
        self._range = MASK
        self._out = bytearray()
        self._done = False

    def encode(self, values: np.ndarray, table: FrequencyTable) -> None:
        if self._done:
            raise ContractError("encoder already finished")
        idx = np.asarray(values, dtype=np.int64).reshape(-1) - table.offset
        if idx.size and (idx.min() < 0 or idx.max() >= table.size):
            raise ContractError("value outside table alphabet")
        cum = table.cum
        freq = table.freq
        low, range_, out = self._low, self._range, self._out
        for i in idx:
            r = range_ >> 16
            low += int(cum[i]) * r
            range_ = int(freq[i]) * r
            while (low ^ (low + range_)) < TOP or range_ < BOTTOM:
                if not (low ^ (low + range_)) < TOP:
                    # underflow: force the interval below the byte boundary
                    range_ = (MASK + 1 - low) & (BOTTOM - 1)
                out.append((low >> (PRECISION - 8)) & 0xFF)
                low = (low << 8) & MASK
                range_ <<= 8
        self._low, self._range = low, range_

    def finish(self) -> bytes:
        if not self._done:
            low = self._low
            for _ in range(PRECISION // 8):
                self._out.append((low >> (PRECISION - 8)) & 0xFF)
                low = (low << 8) & MASK
            self._done = True
        return bytes(self._out)


class RangeDecoder:
    """Streaming decoder over one encoded byte string."""

    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0
        self._low = 0
        self._range = MASK
        self._state = 0
        for _ in range(PRECISION // 8):
            self._state = ((self._state << 8) | self._next_byte()) & MASK

    def _next_byte(self) -> int:
        if self._pos >= len(self._data):
            raise DecodeError("range-coded stream truncated")
        b = self._data[self._pos]
        self._pos += 1
        return b

    def decode(self, count: int, table: FrequencyTable) -> np.ndarray:
        if count < 0:
            raise ContractError("count must be >= 0")
        cum = table.cum
        freq = table.freq
        low, range_, state = self._low, self._range, self._state
        out = np.empty(count, dtype=np.int64)
        for n in range(count):
            r = range_ >> 16
            t = (state - low) // r
            i = int(np.searchsorted(cum, t, side="right")) - 1
            if i < 0 or i >= table.size:
                raise DecodeError("range-coded stream corrupt")
            out[n] = i
            low += int(cum[i]) * r
            range_ = int(freq[i]) * r
            while (low ^ (low + range_)) < TOP or range_ < BOTTOM:
                if not (low ^ (low + range_)) < TOP:
                    range_ = (MASK + 1 - low) & (BOTTOM - 1)
                state = ((state << 8) | self._next_byte()) & MASK
                low = (low << 8) & MASK
                range_ <<= 8
        self._low, self._range, self._state = low, range_, state
        return (out + table.offset).astype(np.int32)


def encode_symbols(values: np.ndarray, table: FrequencyTable) -> bytes:
    """One-shot encode of integer symbol values under a single table."""
    enc = RangeEncoder()
    enc.encode(values, table)
    return enc.finish()


def decode_symbols(data: bytes, count: int, table: FrequencyTable) -> np.ndarray:
    """One-shot decode of ``count`` symbol values under a single table."""
    return RangeDecoder(data).decode(count, table)
