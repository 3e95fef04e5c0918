"""Byte-oriented range coder kernels (carry-propagating, LZMA-style).

Registers: 33-bit ``low`` with a one-byte cache plus a run of pending 0xFF
bytes, 32-bit ``range``. Renormalisation shifts out a byte whenever range
drops below 2**24. Frequencies always total 2**16.

All kernels work on int64 arrays so they compile under numba and still run
(slowly) as plain Python when numba is unavailable.
"""

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

PROB_BITS = 16
TOP = 1 << 24
MASK32 = 0xFFFFFFFF

# decoder state slots
CODE, RANGE, POS = 0, 1, 2


@njit(cache=True, nogil=True)
def encode_kernel(sym_idx, pmf_idx, cdf, out):
    """Encode symbols; returns number of bytes written to ``out``.

    ``sym_idx[i]`` is the symbol's position in its alphabet and ``cdf`` the
    (n_pmf, n+1) cumulative table of the PMF selected by ``pmf_idx[i]``.
    """
    low = 0
    rng = MASK32
    cache = 0
    cache_size = 1
    pos = 0
    n = sym_idx.shape[0]
    for i in range(n + 5):
        if i < n:
            row = pmf_idx[i]
            s = sym_idx[i]
            c_lo = cdf[row, s]
            freq = cdf[row, s + 1] - c_lo
            r = rng >> PROB_BITS
            low += r * c_lo
            rng = r * freq
            shifts = 0
            while rng < TOP:
                rng <<= 8
                shifts += 1
        else:
            shifts = 1
        for _ in range(shifts):
            # shift_low
            if low < 0xFF000000 or low > MASK32:
                carry = low >> 32
                temp = cache
                while True:
                    out[pos] = (temp + carry) & 0xFF
                    pos += 1
                    temp = 0xFF
                    cache_size -= 1
                    if cache_size == 0:
                        break
                cache = (low >> 24) & 0xFF
            cache_size += 1
            low = (low & 0x00FFFFFF) << 8
    return pos


@njit(cache=True, nogil=True)
def decoder_init(data, state):
    """Prime the decoder with the first five bytes. Returns 0 or -1."""
    if data.shape[0] < 5:
        return -1
    code = 0
    for k in range(5):
        code = (code << 8) | data[k]
    state[CODE] = code
    state[RANGE] = MASK32
    state[POS] = 5
    return 0


@njit(cache=True, nogil=True)
def decode_kernel(data, state, pmf_idx, cdf, lengths, out):
    """Decode ``len(pmf_idx)`` symbol indices into ``out``.

    Returns 0 on success, -1 when the stream runs out of bytes.
    """
    code = state[CODE]
    rng = state[RANGE]
    pos = state[POS]
    nbytes = data.shape[0]
    total = 1 << PROB_BITS
    for i in range(pmf_idx.shape[0]):
        row = pmf_idx[i]
        r = rng >> PROB_BITS
        v = code // r
        if v >= total:
            v = total - 1
        lo = 0
        hi = lengths[row]
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if cdf[row, mid] <= v:
                lo = mid
            else:
                hi = mid
        c_lo = cdf[row, lo]
        code -= r * c_lo
        rng = r * (cdf[row, lo + 1] - c_lo)
        while rng < TOP:
            if pos >= nbytes:
                return -1
            code = ((code << 8) | data[pos]) & MASK32
            rng <<= 8
            pos += 1
        out[i] = lo
    state[CODE] = code
    state[RANGE] = rng
    state[POS] = pos
    return 0
