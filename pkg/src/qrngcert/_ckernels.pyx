# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sampling and counting kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t, uint8_t, int16_t

cnp.import_array()

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL
cdef double TO_UNIT = 1.0 / 9007199254740992.0

UNHERALDED = -1
LOST = -2


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t key, uint64_t ctr) noexcept nogil:
    return <double>(_mix(key + (ctr + 1) * GAMMA) >> 11) * TO_UNIT


cdef inline Py_ssize_t _bucket(double u, const double[::1] cdf, Py_ssize_t nb) noexcept nogil:
    cdef Py_ssize_t k = 0
    while k < nb - 1 and u >= cdf[k]:
        k += 1
    return k


def sample_codes(uint64_t key, int64_t start, int64_t n, double herald, cdf):
    cdef const double[::1] c = np.ascontiguousarray(cdf, dtype=np.float64)
    cdef Py_ssize_t nb = c.shape[0]
    out_arr = np.empty(n, dtype=np.int16)
    cdef int16_t[::1] out = out_arr
    cdef int64_t t
    cdef uint64_t i
    cdef Py_ssize_t k
    with nogil:
        for t in range(n):
            i = <uint64_t>(start + t)
            if _uniform(key, 2 * i) >= herald:
                out[t] = -1
                continue
            k = _bucket(_uniform(key, 2 * i + 1), c, nb)
            out[t] = -2 if k == nb - 1 else <int16_t>k
    return out_arr


def count_codes(uint64_t key, int64_t start, int64_t n, double herald, cdf):
    cdef const double[::1] c = np.ascontiguousarray(cdf, dtype=np.float64)
    cdef Py_ssize_t nb = c.shape[0]
    counts_arr = np.zeros(nb + 1, dtype=np.int64)
    cdef int64_t[::1] counts = counts_arr
    cdef int64_t t
    cdef uint64_t i
    with nogil:
        for t in range(n):
            i = <uint64_t>(start + t)
            if _uniform(key, 2 * i) >= herald:
                counts[nb] += 1
            else:
                counts[_bucket(_uniform(key, 2 * i + 1), c, nb)] += 1
    return counts_arr


def von_neumann(bits):
    cdef const uint8_t[::1] b = np.ascontiguousarray(bits, dtype=np.uint8)
    cdef Py_ssize_t npairs = b.shape[0] // 2
    out_arr = np.empty(npairs, dtype=np.uint8)
    cdef uint8_t[::1] out = out_arr
    cdef Py_ssize_t p, m = 0
    with nogil:
        for p in range(npairs):
            if b[2 * p] != b[2 * p + 1]:
                out[m] = b[2 * p]
                m += 1
    return out_arr[:m].copy()


def block_counts(digits, int base, int m):
    cdef const uint8_t[::1] d = np.ascontiguousarray(digits, dtype=np.uint8)
    cdef Py_ssize_t nblocks = d.shape[0] // m
    cdef Py_ssize_t nwords = 1
    for _ in range(m):
        nwords *= base
    counts_arr = np.zeros(nwords, dtype=np.int64)
    cdef int64_t[::1] counts = counts_arr
    cdef Py_ssize_t blk, r
    cdef int64_t word
    with nogil:
        for blk in range(nblocks):
            word = 0
            for r in range(m):
                word = word * base + d[blk * m + r]
            counts[word] += 1
    return counts_arr
