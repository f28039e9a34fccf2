# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled enumeration kernels; same signatures as ``_fallback``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()

NAME = "cython"

cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


def fwht(double[::1] a):
    cdef Py_ssize_t n = a.shape[0], h = 1, i, j
    cdef double x, y
    if n & (n - 1):
        raise ValueError("length must be a power of two")
    with nogil:
        while h < n:
            i = 0
            while i < n:
                for j in range(i, i + h):
                    x = a[j]
                    y = a[j + h]
                    a[j] = x + y
                    a[j + h] = x - y
                i += 2 * h
            h *= 2
    return np.asarray(a)


def neg_energy(int n, masks, values):
    cdef unsigned long long[::1] m = np.ascontiguousarray(masks, dtype=np.uint64)
    cdef double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t N = (<Py_ssize_t>1) << n, K = m.shape[0], c, k
    if K > 2:
        # many terms: scatter the coefficients and transform once
        coef = np.zeros(N)
        np.add.at(coef, np.asarray(m, dtype=np.int64), np.asarray(v))
        return fwht(coef)
    out = np.empty(N)
    cdef double[::1] o = out
    cdef double acc
    with nogil:
        for c in range(N):
            acc = 0.0
            for k in range(K):
                if __builtin_popcountll(<unsigned long long>c & m[k]) & 1:
                    acc -= v[k]
                else:
                    acc += v[k]
            o[c] = acc
    return out


def char_values(int n, unsigned long long mask):
    cdef Py_ssize_t N = (<Py_ssize_t>1) << n, c
    out = np.empty(N)
    cdef double[::1] o = out
    with nogil:
        for c in range(N):
            o[c] = -1.0 if __builtin_popcountll(<unsigned long long>c & mask) & 1 else 1.0
    return out


def _check_bins(w, b, Py_ssize_t nbins):
    if w.ndim != 1 or b.shape != w.shape:
        raise ValueError("lw and bins must be 1-d arrays of equal length")
    if b.size and (b.min() < 0 or b.max() >= nbins):
        raise ValueError("bin index out of range")


def group_logsumexp(lw, bins, Py_ssize_t nbins):
    lw = np.ascontiguousarray(lw, dtype=np.float64)
    bins = np.ascontiguousarray(bins, dtype=np.int64)
    _check_bins(lw, bins, nbins)
    cdef double[::1] w = lw
    cdef long long[::1] b = bins
    cdef Py_ssize_t N = w.shape[0], c
    top = np.full(nbins, -INFINITY)
    acc = np.zeros(nbins)
    cdef double[::1] t = top
    cdef double[::1] s = acc
    with nogil:
        for c in range(N):
            if w[c] > t[b[c]]:
                t[b[c]] = w[c]
        for c in range(N):
            if w[c] > -INFINITY:
                s[b[c]] += exp(w[c] - t[b[c]])
        for c in range(nbins):
            if s[c] > 0.0:
                t[c] = t[c] + log(s[c])
    return top


def group_moments(lw, bins, shift, masks):
    lw = np.ascontiguousarray(lw, dtype=np.float64)
    bins = np.ascontiguousarray(bins, dtype=np.int64)
    shift = np.ascontiguousarray(shift, dtype=np.float64)
    if shift.ndim != 1:
        raise ValueError("shift must hold one value per bin")
    _check_bins(lw, bins, shift.shape[0])
    cdef double[::1] w = lw
    cdef long long[::1] b = bins
    cdef double[::1] sh = shift
    cdef unsigned long long[::1] m = np.ascontiguousarray(masks, dtype=np.uint64).reshape(-1)
    cdef Py_ssize_t N = w.shape[0], K = m.shape[0], nb = sh.shape[0], c, k
    out = np.zeros((K + 1, nb))
    cdef double[:, ::1] o = out
    cdef double e
    with nogil:
        for c in range(N):
            if w[c] == -INFINITY:
                continue
            e = exp(w[c] - sh[b[c]])
            o[0, b[c]] += e
            for k in range(K):
                if __builtin_popcountll(<unsigned long long>c & m[k]) & 1:
                    o[k + 1, b[c]] -= e
                else:
                    o[k + 1, b[c]] += e
    return out
