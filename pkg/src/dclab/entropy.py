"""Quantised PMFs, the discretised Gaussian model and the range coder API.

Every PMF is a table of integer frequencies totalling 2**16 with each symbol
holding at least one unit, so coding is bit-exact across platforms.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from . import _rangecoder as rc
from .errors import InputError, StreamError

__all__ = [
    "PROB_TOTAL",
    "SCALE_FLOOR",
    "DEFAULT_ALPHABET",
    "SCALE_TABLE",
    "MEAN_RESOLUTION",
    "SymbolPmf",
    "GaussianParams",
    "discretized_gaussian_masses",
    "quantize_masses",
    "discretized_gaussian_pmf",
    "uniform_pmf",
    "encode_symbols",
    "decode_symbols",
    "estimate_rate",
    "encode_indexed",
    "IndexedDecoder",
    "GaussianTable",
    "frame_stream",
    "read_stream",
]

PROB_TOTAL = 1 << rc.PROB_BITS
SCALE_FLOOR = 0.11
DEFAULT_ALPHABET = (-128, 127)
# geometric scale grid used when many symbols share cached PMFs
SCALE_TABLE = np.geomspace(SCALE_FLOOR, 256.0, 64)
MEAN_RESOLUTION = 8

_FRAME = struct.Struct("<II")


@dataclass(frozen=True, eq=False)
class SymbolPmf:
    """Integer frequencies for symbols ``symbol_min..symbol_max``."""

    symbol_min: int
    symbol_max: int
    freqs: np.ndarray

    def __post_init__(self):
        freqs = np.array(self.freqs, dtype=np.int64)
        if self.symbol_max <= self.symbol_min:
            raise InputError("alphabet needs symbol_min < symbol_max")
        if freqs.shape != (self.symbol_max - self.symbol_min + 1,):
            raise InputError("one frequency per symbol required")
        if freqs.min() < 1 or int(freqs.sum()) != PROB_TOTAL:
            raise InputError("frequencies must be >= 1 and total 2**16")
        freqs.flags.writeable = False
        object.__setattr__(self, "freqs", freqs)

    @property
    def size(self) -> int:
        return self.freqs.shape[0]

    @property
    def cdf(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.freqs)))

    def freq(self, symbol: int) -> int:
        return int(self.freqs[symbol - self.symbol_min])

    def __eq__(self, other):
        if not isinstance(other, SymbolPmf):
            return NotImplemented
        return (
            (self.symbol_min, self.symbol_max) == (other.symbol_min, other.symbol_max)
            and bool(np.array_equal(self.freqs, other.freqs))
        )

    __hash__ = None


@dataclass(frozen=True)
class GaussianParams:
    mean: float
    scale: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.scale)) or self.scale <= 0:
            raise InputError("Gaussian needs a finite mean and positive scale")


def discretized_gaussian_masses(mean, scale, symbol_min, symbol_max, tails="fold"):
    """Real-valued masses of a Gaussian integrated over unit bins.

    Bins are ``[k - 1/2, k + 1/2)``. ``tails="fold"`` adds the mass beyond the
    alphabet to the two boundary symbols; ``"truncate"`` renormalises instead.
    Mirror-image symbols are evaluated with mirror-image arithmetic so a
    zero-mean PMF on a symmetric alphabet is exactly symmetric.
    """
    scale = max(float(scale), SCALE_FLOOR)
    k = np.arange(symbol_min, symbol_max + 1, dtype=np.float64)
    d = k - mean
    hi = (d + 0.5) / scale
    lo = (d - 0.5) / scale
    right = d >= 0
    masses = np.where(right, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))
    if tails == "fold":
        masses[0] = ndtr(hi[0])
        masses[-1] = ndtr(-lo[-1])
    elif tails == "truncate":
        total = masses.sum()
        if total > 0:
            masses = masses / total
    else:
        raise InputError(f"unknown tail mode {tails!r}")
    return masses


def quantize_masses(masses: np.ndarray, center: float = 0.0, symbol_min: int = 0) -> np.ndarray:
    """Largest-remainder rounding to a 2**16 total with a floor of one unit.

    Units left over after flooring go to the largest fractional parts.
    Entries that tie on both fractional part and distance to ``center`` are
    granted together or not at all; anything left after that goes to the mode.
    """
    masses = np.asarray(masses, dtype=np.float64)
    n = masses.shape[0]
    if n > PROB_TOTAL:
        raise InputError("alphabet larger than the frequency total")
    total = masses.sum()
    p = masses / total if total > 0 else np.full(n, 1.0 / n)
    scaled = p * (PROB_TOTAL - n)
    base = np.floor(scaled)
    frac = scaled - base
    freqs = base.astype(np.int64) + 1
    left = PROB_TOTAL - int(freqs.sum())
    if left > 0:
        dist = np.abs(np.arange(n) + symbol_min - center)
        order = np.lexsort((np.arange(n), dist, -frac))
        i = 0
        while i < n and left > 0:
            j = i + 1
            while j < n and frac[order[j]] == frac[order[i]] and dist[order[j]] == dist[order[i]]:
                j += 1
            if j - i <= left:
                freqs[order[i:j]] += 1
                left -= j - i
            i = j
        if left:
            freqs[int(np.argmax(freqs))] += left
    return freqs


def discretized_gaussian_pmf(params: GaussianParams, symbol_min: int = DEFAULT_ALPHABET[0],
                             symbol_max: int = DEFAULT_ALPHABET[1], tails: str = "fold") -> SymbolPmf:
    """Quantised PMF of a Gaussian discretised onto an integer alphabet.

    Scales below ``SCALE_FLOOR`` are clamped up to it.
    """
    if symbol_max <= symbol_min:
        raise InputError("degenerate alphabet")
    masses = discretized_gaussian_masses(params.mean, params.scale, symbol_min, symbol_max, tails)
    return SymbolPmf(symbol_min, symbol_max, quantize_masses(masses, params.mean, symbol_min))


def uniform_pmf(symbol_min: int, symbol_max: int) -> SymbolPmf:
    n = symbol_max - symbol_min + 1
    return SymbolPmf(symbol_min, symbol_max, quantize_masses(np.ones(n)))


def _tables(pmfs: Sequence[SymbolPmf]):
    """Stack distinct PMFs into one cdf table; returns (cdf, lengths, index, mins)."""
    rows: dict[int, int] = {}
    uniq: list[SymbolPmf] = []
    index = np.empty(len(pmfs), dtype=np.int64)
    for i, pmf in enumerate(pmfs):
        row = rows.get(id(pmf))
        if row is None:
            row = rows[id(pmf)] = len(uniq)
            uniq.append(pmf)
        index[i] = row
    width = max((p.size for p in uniq), default=1) + 1
    cdf = np.full((max(len(uniq), 1), width), PROB_TOTAL, dtype=np.int64)
    lengths = np.ones(max(len(uniq), 1), dtype=np.int64)
    for r, pmf in enumerate(uniq):
        cdf[r, :pmf.size + 1] = pmf.cdf
        lengths[r] = pmf.size
    mins = np.array([p.symbol_min for p in uniq] or [0], dtype=np.int64)
    maxs = np.array([p.symbol_max for p in uniq] or [0], dtype=np.int64)
    return cdf, lengths, index, mins, maxs


def encode_indexed(sym_idx: np.ndarray, pmf_idx: np.ndarray, cdf: np.ndarray) -> bytes:
    """Encode symbol indices against rows of a prepared cdf table."""
    sym_idx = np.ascontiguousarray(sym_idx, dtype=np.int64)
    pmf_idx = np.ascontiguousarray(pmf_idx, dtype=np.int64)
    out = np.empty(3 * sym_idx.shape[0] + 16, dtype=np.int64)
    n = rc.encode_kernel(sym_idx, pmf_idx, np.ascontiguousarray(cdf, dtype=np.int64), out)
    return out[:n].astype(np.uint8).tobytes()


class IndexedDecoder:
    """Incremental decoder: symbols can be pulled in batches (one per step)."""

    def __init__(self, payload: bytes):
        self._data = np.frombuffer(payload, dtype=np.uint8).astype(np.int64)
        self._state = np.zeros(3, dtype=np.int64)
        if rc.decoder_init(self._data, self._state) < 0:
            raise StreamError("range-coded stream shorter than its 5-byte preamble")

    def decode(self, pmf_idx: np.ndarray, cdf: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        pmf_idx = np.ascontiguousarray(pmf_idx, dtype=np.int64)
        out = np.empty(pmf_idx.shape[0], dtype=np.int64)
        status = rc.decode_kernel(self._data, self._state, pmf_idx,
                                  np.ascontiguousarray(cdf, dtype=np.int64),
                                  np.ascontiguousarray(lengths, dtype=np.int64), out)
        if status < 0:
            raise StreamError("range-coded stream is truncated")
        return out

    @property
    def bytes_consumed(self) -> int:
        return int(self._state[rc.POS])


def encode_symbols(symbols: Sequence[int], pmfs: Sequence[SymbolPmf]) -> bytes:
    """Range-code ``symbols[i]`` under ``pmfs[i]``."""
    if len(symbols) != len(pmfs):
        raise InputError("need exactly one PMF per symbol")
    cdf, _, index, mins, maxs = _tables(pmfs)
    sym = np.asarray(symbols, dtype=np.int64).reshape(-1)
    if sym.size and (np.any(sym < mins[index]) or np.any(sym > maxs[index])):
        bad = int(np.flatnonzero((sym < mins[index]) | (sym > maxs[index]))[0])
        raise InputError(f"symbol {int(sym[bad])} at position {bad} is outside its alphabet")
    return encode_indexed(sym - mins[index], index, cdf)


def decode_symbols(data: bytes, pmfs: Sequence[SymbolPmf]) -> list[int]:
    cdf, lengths, index, mins, _ = _tables(pmfs)
    dec = IndexedDecoder(data)
    idx = dec.decode(index, cdf, lengths)
    return (idx + mins[index]).tolist()


def estimate_rate(symbols: Sequence[int], pmfs: Sequence[SymbolPmf]) -> float:
    """Ideal code length in bits: sum of -log2(freq / 2**16)."""
    if len(symbols) != len(pmfs):
        raise InputError("need exactly one PMF per symbol")
    freqs = np.fromiter((p.freq(int(s)) for s, p in zip(symbols, pmfs)), dtype=np.float64,
                        count=len(pmfs))
    return float(np.sum(rc.PROB_BITS - np.log2(freqs)))


@lru_cache(maxsize=1 << 16)
def _cdf_row(symbol_min: int, symbol_max: int, mean_key: int, scale_key: int) -> np.ndarray:
    """Cumulative frequencies for one grid key; shared by every table in the process."""
    mean = mean_key / MEAN_RESOLUTION
    masses = discretized_gaussian_masses(mean, SCALE_TABLE[scale_key], symbol_min, symbol_max)
    row = np.zeros(symbol_max - symbol_min + 2, dtype=np.int64)
    np.cumsum(quantize_masses(masses, mean, symbol_min), out=row[1:])
    row.flags.writeable = False
    return row


class GaussianTable:
    """Cache of quantised Gaussian PMFs keyed by a (mean, scale) grid.

    Means are snapped to 1/MEAN_RESOLUTION and clamped to the alphabet;
    scales snap to the nearest entry of ``SCALE_TABLE`` in log space. Rows
    are appended as new keys appear, so the cdf table only grows.
    """

    def __init__(self, symbol_min: int = DEFAULT_ALPHABET[0],
                 symbol_max: int = DEFAULT_ALPHABET[1]):
        if symbol_max <= symbol_min:
            raise InputError("degenerate alphabet")
        self.symbol_min = symbol_min
        self.symbol_max = symbol_max
        self.size = symbol_max - symbol_min + 1
        self._rows: dict[tuple[int, int], int] = {}
        self._cdf = np.zeros((0, self.size + 1), dtype=np.int64)
        self._freq_log = np.zeros((0, self.size))
        self._log_scales = np.log(SCALE_TABLE)

    @property
    def cdf(self) -> np.ndarray:
        return self._cdf

    @property
    def lengths(self) -> np.ndarray:
        return np.full(self._cdf.shape[0], self.size, dtype=np.int64)

    def keys(self, means: np.ndarray, scales: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        m = np.rint(np.asarray(means, dtype=np.float64) * MEAN_RESOLUTION)
        m = np.clip(m, self.symbol_min * MEAN_RESOLUTION, self.symbol_max * MEAN_RESOLUTION)
        s = np.log(np.maximum(np.asarray(scales, dtype=np.float64), SCALE_FLOOR))
        edges = 0.5 * (self._log_scales[1:] + self._log_scales[:-1])
        return m.astype(np.int64), np.searchsorted(edges, s).astype(np.int64)

    def rows(self, means: np.ndarray, scales: np.ndarray) -> np.ndarray:
        """Row index of the cached PMF for each (mean, scale) pair."""
        mk, sk = self.keys(means, scales)
        packed = mk * len(SCALE_TABLE) + sk
        uniq, inverse = np.unique(packed, return_inverse=True)
        missing = [int(u) for u in uniq if (int(u) // len(SCALE_TABLE), int(u) % len(SCALE_TABLE)) not in self._rows]
        if missing:
            new_cdf = np.empty((len(missing), self.size + 1), dtype=np.int64)
            for i, u in enumerate(missing):
                key = (u // len(SCALE_TABLE), u % len(SCALE_TABLE))
                new_cdf[i] = _cdf_row(self.symbol_min, self.symbol_max, *key)
                self._rows[key] = self._cdf.shape[0] + i
            self._cdf = np.concatenate((self._cdf, new_cdf))
            self._freq_log = np.concatenate(
                (self._freq_log, rc.PROB_BITS - np.log2(np.diff(new_cdf, axis=1))))
        lookup = np.array([self._rows[(int(u) // len(SCALE_TABLE), int(u) % len(SCALE_TABLE))]
                           for u in uniq], dtype=np.int64)
        return lookup[inverse.reshape(-1)]

    def bits(self, symbols: np.ndarray, rows: np.ndarray) -> np.ndarray:
        """Ideal cost in bits of each symbol under its row."""
        return self._freq_log[rows, np.asarray(symbols, dtype=np.int64) - self.symbol_min]

    def check_symbols(self, symbols: np.ndarray) -> None:
        symbols = np.asarray(symbols)
        if symbols.size and (symbols.min() < self.symbol_min or symbols.max() > self.symbol_max):
            raise InputError("symbol outside the coding alphabet")


def frame_stream(symbol_count: int, payload: bytes) -> bytes:
    """{u32 symbol_count, u32 byte_length, payload}."""
    return _FRAME.pack(symbol_count, len(payload)) + payload


def read_stream(buf: bytes, offset: int = 0) -> tuple[int, bytes, int]:
    """Parse a framed stream; returns (symbol_count, payload, next offset)."""
    if len(buf) - offset < _FRAME.size:
        raise StreamError("truncated stream header")
    count, length = _FRAME.unpack_from(buf, offset)
    offset += _FRAME.size
    if len(buf) - offset < length:
        raise StreamError("truncated stream payload")
    return count, bytes(buf[offset:offset + length]), offset + length
