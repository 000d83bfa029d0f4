# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled k-nearest-neighbour and LOF kernels.

Same contract as ``_lofcore_py``: neighbours are ordered by (distance, index)
so both backends pick identical neighbour sets, ties included.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef inline void _knn_row(const double[:, ::1] ref, const double[:, ::1] q,
                          Py_ssize_t row, Py_ssize_t skip, Py_ssize_t k,
                          double* bd, Py_ssize_t* bi) noexcept nogil:
    cdef Py_ssize_t n = ref.shape[0], dim = ref.shape[1]
    cdef Py_ssize_t j, t, pos, filled = 0
    cdef double s, diff, dist
    for j in range(n):
        if j == skip:
            continue
        s = 0.0
        for t in range(dim):
            diff = ref[j, t] - q[row, t]
            s += diff * diff
        dist = sqrt(s)
        if filled < k:
            pos = filled
            filled += 1
        elif dist < bd[k - 1]:
            pos = k - 1
        else:
            continue
        while pos > 0 and bd[pos - 1] > dist:
            bd[pos] = bd[pos - 1]
            bi[pos] = bi[pos - 1]
            pos -= 1
        bd[pos] = dist
        bi[pos] = j


def knn(const double[:, ::1] ref, const double[:, ::1] queries, Py_ssize_t k,
        bint exclude_self=False):
    """Return ``(dist, idx)`` arrays of shape (m, k)."""
    cdef Py_ssize_t m = queries.shape[0], i, skip
    out_d = np.empty((m, k), dtype=np.float64)
    out_i = np.empty((m, k), dtype=np.intp)
    cdef double[:, ::1] od = out_d
    cdef Py_ssize_t[:, ::1] oi = out_i
    with nogil:
        for i in range(m):
            skip = i if exclude_self else -1
            _knn_row(ref, queries, i, skip, k, &od[i, 0], &oi[i, 0])
    return out_d, out_i


def fit(const double[:, ::1] ref, Py_ssize_t k, double eps):
    """k-distance and local reachability density of every reference point."""
    cdef Py_ssize_t n = ref.shape[0], i, j
    dist, idx = knn(ref, ref, k, True)
    cdef double[:, ::1] d = dist
    cdef Py_ssize_t[:, ::1] ix = idx
    kdist_arr = np.empty(n, dtype=np.float64)
    lrd_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] kd = kdist_arr
    cdef double[::1] lrd = lrd_arr
    cdef double acc, r
    with nogil:
        for i in range(n):
            kd[i] = d[i, k - 1]
        for i in range(n):
            acc = 0.0
            for j in range(k):
                r = kd[ix[i, j]]
                if d[i, j] > r:
                    r = d[i, j]
                acc += r
            acc = acc / k
            if acc < eps:
                acc = eps
            lrd[i] = 1.0 / acc
    return kdist_arr, lrd_arr


def score(const double[:, ::1] ref, const double[::1] kdist, const double[::1] lrd,
          const double[:, ::1] queries, Py_ssize_t k, double eps):
    """LOF of each query row against a fitted reference set."""
    cdef Py_ssize_t m = queries.shape[0], i, j, o
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] res = out
    cdef double* bd = <double*> malloc(k * sizeof(double))
    cdef Py_ssize_t* bi = <Py_ssize_t*> malloc(k * sizeof(Py_ssize_t))
    cdef double reach, dens, r
    if bd == NULL or bi == NULL:
        free(bd)
        free(bi)
        raise MemoryError()
    try:
        with nogil:
            for i in range(m):
                _knn_row(ref, queries, i, -1, k, bd, bi)
                reach = 0.0
                dens = 0.0
                for j in range(k):
                    o = bi[j]
                    r = kdist[o]
                    if bd[j] > r:
                        r = bd[j]
                    reach += r
                    dens += lrd[o]
                reach = reach / k
                if reach < eps:
                    reach = eps
                res[i] = (dens / k) * reach
    finally:
        free(bd)
        free(bi)
    return out
