# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled versions of the hot loops in :mod:`._pykernels`."""

import numpy as np
from libc.math cimport sqrt, INFINITY


def envelope_min(const double[:, ::1] points, const double[::1] a,
                 const double[:, ::1] foci, const double[::1] heights, double eps):
    cdef Py_ssize_t M = points.shape[0], N = a.shape[0], n = points.shape[1]
    cdef Py_ssize_t i, j, d
    cdef double k = eps * eps - 1.0, r2, diff, h, best
    cdef long long bi
    out = np.empty(M, dtype=np.float64)
    idx = np.empty(M, dtype=np.int64)
    cdef double[::1] out_v = out
    cdef long long[::1] idx_v = idx
    with nogil:
        for i in range(M):
            best = INFINITY
            bi = 0
            for j in range(N):
                r2 = 0.0
                for d in range(n):
                    diff = points[i, d] - foci[j, d]
                    r2 = r2 + diff * diff
                h = heights[j] - a[j] * eps - sqrt(a[j] * a[j] + r2 / k)
                if h < best:
                    best = h
                    bi = j
            out_v[i] = best
            idx_v[i] = bi
    return out, idx


def capture_flux(const double[::1] r2, const double[::1] weights, double a, double height,
                 double eps, const double[::1] lower, const double[::1] upper):
    cdef Py_ssize_t M = r2.shape[0], i
    cdef double k = eps * eps - 1.0, h, total = 0.0, base = height - a * eps, a2 = a * a
    with nogil:
        for i in range(M):
            h = base - sqrt(a2 + r2[i] / k)
            if h < lower[i] and h <= upper[i]:
                total = total + weights[i]
    return total
