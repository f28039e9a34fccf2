"""Pure numpy implementations of the enumeration kernels.

Configuration ``c`` in ``range(2**n)`` encodes spins by bits: bit ``k`` set
means spin ``k`` is -1.  The character ``sigma_A(c)`` is therefore
``(-1)**popcount(c & A)``.
"""
import numpy as np

NAME = "numpy"


def fwht(a):
    """In-place unnormalized Walsh-Hadamard transform of a length-2^k float array."""
    n = a.shape[0]
    if n & (n - 1):
        raise ValueError("length must be a power of two")
    h = 1
    while h < n:
        v = a.reshape(-1, 2, h)
        x = v[:, 0, :].copy()
        v[:, 0, :] += v[:, 1, :]
        v[:, 1, :] = x - v[:, 1, :]
        h *= 2
    return a


def neg_energy(n, masks, values):
    """``-H(c) = sum_k values[k] * sigma_{masks[k]}(c)`` for every configuration."""
    coef = np.zeros(1 << n)
    np.add.at(coef, np.asarray(masks, dtype=np.int64), np.asarray(values, dtype=np.float64))
    return fwht(coef)


def char_values(n, mask):
    c = np.arange(1 << n, dtype=np.uint64)
    odd = np.bitwise_count(c & np.uint64(mask)) & 1
    return 1.0 - 2.0 * odd


def group_logsumexp(lw, bins, nbins):
    """Per-bin log-sum-exp of ``lw`` (``-inf`` for empty bins)."""
    lw = np.asarray(lw, dtype=np.float64)
    bins = np.asarray(bins, dtype=np.int64)
    top = np.full(nbins, -np.inf)
    np.maximum.at(top, bins, lw)
    shift = np.where(np.isfinite(top), top, 0.0)
    s = np.bincount(bins, weights=np.exp(lw - shift[bins]), minlength=nbins)
    with np.errstate(divide="ignore"):
        return shift + np.log(s)


def group_moments(lw, bins, shift, masks):
    """Rows: ``sum exp(lw - shift[bin])`` then the same weighted by each character."""
    lw = np.asarray(lw, dtype=np.float64)
    bins = np.asarray(bins, dtype=np.int64)
    nbins = shift.shape[0]
    w = np.exp(lw - shift[bins])
    out = np.empty((len(masks) + 1, nbins))
    out[0] = np.bincount(bins, weights=w, minlength=nbins)
    if len(masks):
        c = np.arange(lw.shape[0], dtype=np.uint64)
        for k, m in enumerate(masks):
            odd = np.bitwise_count(c & np.uint64(m)) & 1
            out[k + 1] = np.bincount(bins, weights=np.where(odd, -w, w), minlength=nbins)
    return out
