"""Bit-packed boolean matrices with per-column Bernoulli generation.

Rows are packed little-endian into uint64 words (column j lives at bit
``j & 63`` of word ``j >> 6``), which keeps desk-scale code matrices in the
tens of megabytes and makes column statistics a popcount away.

Generation draws one random byte per entry and compares it against the
column threshold ``floor(256 * p_j)``; the 1-in-256 boundary case is
refined with a 53-bit uniform, so the emitted distribution matches
Bernoulli(p_j) to within 2^-61.  The hot loop runs under numba with a
xoshiro256++ stream per row (seeded from the caller's generator), which
makes output independent of thread scheduling.  Little-endian hosts only.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

WORD_BITS = 64

_U64 = np.uint64
_MASK = _U64(0xFFFFFFFFFFFFFFFF)
_LO16 = _U64(0x00FF00FF00FF00FF)
_C16 = _U64(0x0100010001000100)
_ONE16 = _U64(0x0001000100010001)
_MULC = _U64((1 << 48) | (1 << 33) | (1 << 18) | (1 << 3))
_INV53 = 1.0 / 9007199254740992.0

# spread a 4-bit nibble onto even / odd bit positions of a byte
_LUT_E = np.array(
    [sum(1 << (2 * i) for i in range(4) if n >> i & 1) for n in range(16)],
    dtype=np.uint64,
)
_LUT_O = np.array(
    [sum(1 << (2 * i + 1) for i in range(4) if n >> i & 1) for n in range(16)],
    dtype=np.uint64,
)


def n_words(ncols: int) -> int:
    return (ncols + WORD_BITS - 1) // WORD_BITS


@njit(cache=True, inline="always")
def _splitmix64(z):
    z = (z + _U64(0x9E3779B97F4A7C15)) & _MASK
    z = ((z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)) & _MASK
    z = ((z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)) & _MASK
    return z ^ (z >> _U64(31))


@njit(cache=True, inline="always")
def _rotl(x, k):
    return ((x << k) | (x >> (_U64(64) - k))) & _MASK


@njit(cache=True, inline="always")
def _xnext(s0, s1, s2, s3):
    out = (_rotl((s0 + s3) & _MASK, _U64(23)) + s0) & _MASK
    t = (s1 << _U64(17)) & _MASK
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, _U64(45))
    return out, s0, s1, s2, s3


@njit(cache=True)
def _gen_row(seed, t8, t8_words, frac, ncols, out_row, lut_e, lut_o):
    # Draw discipline: one u64 per 8-column group, bytes consumed LSB-first;
    # boundary bytes (byte == threshold) draw one extra u64 for refinement,
    # in ascending column order within the group.
    z = seed
    z = _splitmix64(z)
    s0 = z
    z = _splitmix64(z)
    s1 = z
    z = _splitmix64(z)
    s2 = z
    z = _splitmix64(z)
    s3 = z
    ngroups = (ncols + 7) >> 3
    for g in range(ngroups):
        x, s0, s1, s2, s3 = _xnext(s0, s1, s2, s3)
        base = g << 3
        nb = ncols - base
        word_idx = base >> 6
        shift = _U64(base & 63)
        if nb >= 8:
            tw = t8_words[g]
            xe = x & _LO16
            xo = (x >> _U64(8)) & _LO16
            te = tw & _LO16
            to = (tw >> _U64(8)) & _LO16
            se = (xe + _C16 - te) & _MASK
            so = (xo + _C16 - to) & _MASK
            lt_e = (~se) & _C16
            lt_o = (~so) & _C16
            nib_e = ((((lt_e >> _U64(8)) * _MULC) & _MASK) >> _U64(48)) & _U64(0xF)
            nib_o = ((((lt_o >> _U64(8)) * _MULC) & _MASK) >> _U64(48)) & _U64(0xF)
            grp = lut_e[nib_e] | lut_o[nib_o]
            eq_e = (se & _C16) & (~((se - _ONE16) & _MASK)) & _C16
            eq_o = (so & _C16) & (~((so - _ONE16) & _MASK)) & _C16
            if (eq_e | eq_o) != _U64(0):
                for t in range(8):
                    if ((x >> _U64(8 * t)) & _U64(0xFF)) == _U64(t8[base + t]):
                        u, s0, s1, s2, s3 = _xnext(s0, s1, s2, s3)
                        if np.float64(u >> _U64(11)) * _INV53 < frac[base + t]:
                            grp |= _U64(1) << _U64(t)
            out_row[word_idx] |= grp << shift
        else:
            grp = _U64(0)
            for t in range(nb):
                r8 = (x >> _U64(8 * t)) & _U64(0xFF)
                tj = _U64(t8[base + t])
                if r8 < tj:
                    grp |= _U64(1) << _U64(t)
                elif r8 == tj:
                    u, s0, s1, s2, s3 = _xnext(s0, s1, s2, s3)
                    if np.float64(u >> _U64(11)) * _INV53 < frac[base + t]:
                        grp |= _U64(1) << _U64(t)
            out_row[word_idx] |= grp << shift


@njit(cache=True, parallel=True)
def _gen_rows(seeds, t8, t8_words, frac, ncols, out, lut_e, lut_o):
    for i in prange(out.shape[0]):
        _gen_row(seeds[i], t8, t8_words, frac, ncols, out[i], lut_e, lut_o)


@njit(cache=True, parallel=True)
def _row_dot(packed, ncols, weights, scores):
    nrows, nwords = packed.shape
    for i in prange(nrows):
        acc = 0.0
        for w in range(nwords):
            word = packed[i, w]
            base = w << 6
            kmax = ncols - base
            if kmax > 64:
                kmax = 64
            for k in range(kmax):
                acc += weights[base + k] * np.float64((word >> _U64(k)) & _U64(1))
        scores[i] = acc


def _thresholds(biases: np.ndarray):
    """Per-column byte threshold and 53-bit refinement fraction."""
    b = np.asarray(biases, dtype=np.float64)
    scaled = b * 256.0
    t8 = np.floor(scaled).astype(np.uint8)
    frac = scaled - t8
    ngroups = (b.size + 7) >> 3
    padded = np.zeros(ngroups * 8, dtype=np.uint8)
    padded[: b.size] = t8
    t8_words = padded.view(np.uint64)
    return t8, t8_words, np.ascontiguousarray(frac)


def bernoulli_pack(biases: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    """Packed (len(seeds), ceil(L/64)) matrix of Bernoulli(biases) rows."""
    ncols = int(np.asarray(biases).size)
    t8, t8_words, frac = _thresholds(biases)
    out = np.zeros((len(seeds), n_words(ncols)), dtype=np.uint64)
    _gen_rows(
        np.ascontiguousarray(seeds, dtype=np.uint64),
        t8, t8_words, frac, ncols, out, _LUT_E, _LUT_O,
    )
    return out


def row_weight_sums(packed: np.ndarray, ncols: int, weights: np.ndarray) -> np.ndarray:
    """Per-row sums of ``weights`` over set bits.

    ``weights`` may be (L,) for one score per row or (M, L) for M scores.
    """
    packed = np.ascontiguousarray(packed, dtype=np.uint64)
    w = np.ascontiguousarray(weights, dtype=np.float64)
    if w.ndim == 1:
        scores = np.zeros(packed.shape[0], dtype=np.float64)
        _row_dot(packed, ncols, w, scores)
        return scores
    scores = np.zeros((packed.shape[0], w.shape[0]), dtype=np.float64)
    for m in range(w.shape[0]):
        col = np.zeros(packed.shape[0], dtype=np.float64)
        _row_dot(packed, ncols, np.ascontiguousarray(w[m]), col)
        scores[:, m] = col
    return scores


def pack_rows(bits) -> np.ndarray:
    """Pack a (rows, L) 0/1 array into uint64 words."""
    bits = np.atleast_2d(np.asarray(bits, dtype=np.uint8))
    nrows, ncols = bits.shape
    wbytes = np.packbits(bits, axis=1, bitorder="little")
    padded = np.zeros((nrows, n_words(ncols) * 8), dtype=np.uint8)
    padded[:, : wbytes.shape[1]] = wbytes
    return np.ascontiguousarray(padded).view(np.uint64)


def unpack_rows(packed: np.ndarray, ncols: int, rows=None) -> np.ndarray:
    """Unpack selected rows to a (rows, ncols) uint8 0/1 array."""
    sel = packed if rows is None else packed[rows]
    sel = np.atleast_2d(sel)
    as_bytes = np.ascontiguousarray(sel).view(np.uint8)
    return np.unpackbits(as_bytes, axis=1, count=ncols, bitorder="little")


def column_counts(packed: np.ndarray, ncols: int, rows=None, block=64) -> np.ndarray:
    """Per-column number of set bits over the selected rows."""
    sel = packed if rows is None else packed[rows]
    sel = np.atleast_2d(sel)
    counts = np.zeros(ncols, dtype=np.int64)
    for lo in range(0, sel.shape[0], block):
        chunk = unpack_rows(sel, ncols, rows=slice(lo, lo + block))
        counts += chunk.sum(axis=0, dtype=np.int64)
    return counts


def row_counts(packed: np.ndarray) -> np.ndarray:
    """Number of set bits in each row (padding bits are always zero)."""
    return np.bitwise_count(packed).sum(axis=1, dtype=np.int64)


def get_bits(packed: np.ndarray, rows, cols) -> np.ndarray:
    """Elementwise bit gather: bit (rows[t], cols[t]) as uint8."""
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    words = packed[rows, cols >> 6]
    return ((words >> (cols & 63).astype(np.uint64)) & 1).astype(np.uint8)


def get_column(packed: np.ndarray, ncols: int, col: int) -> np.ndarray:
    """One full column as a uint8 vector."""
    if not 0 <= col < ncols:
        raise IndexError(f"column {col} outside [0, {ncols})")
    words = packed[:, col >> 6]
    return ((words >> _U64(col & 63)) & _U64(1)).astype(np.uint8)


def warmup():
    """Force JIT compilation of the kernels (cached on disk afterwards)."""
    seeds = np.array([1, 2], dtype=np.uint64)
    biases = np.linspace(0.1, 0.9, 70)
    packed = bernoulli_pack(biases, seeds)
    row_weight_sums(packed, 70, np.ones(70))
    row_weight_sums(packed, 70, np.ones((2, 70)))
