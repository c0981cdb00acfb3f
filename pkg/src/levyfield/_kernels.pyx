# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-path atom reductions over CSR-packed sheet batches."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fmax

cnp.import_array()


def rect_sums(const cnp.int64_t[::1] offsets,
              const double[::1] x,
              const double[::1] y,
              const double[::1] w,
              double x_lo, double x_hi, double y_hi,
              int mode, double T, double c):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    cdef cnp.ndarray[cnp.float64_t, ndim=1] res = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = res
    cdef Py_ssize_t p, k
    cdef double acc, xi, yi, wt
    with nogil:
        for p in range(n):
            acc = 0.0
            for k in range(offsets[p], offsets[p + 1]):
                xi = x[k]
                yi = y[k]
                if xi <= x_lo or xi > x_hi or yi > y_hi:
                    continue
                if mode == 0:
                    wt = 1.0
                elif mode == 1:
                    wt = T - fmax(c, yi)
                else:
                    wt = T - fmax(fmax(c, xi), yi)
                acc = acc + w[k] * wt
            out[p] = acc
    return res


cdef inline Py_ssize_t _first_ge(const double[::1] grid, double v) nogil:
    cdef Py_ssize_t lo = 0, hi = grid.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if grid[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


def grid_sums(const cnp.int64_t[::1] offsets,
              const double[::1] x,
              const double[::1] y,
              const double[::1] w,
              const double[::1] s_grid,
              const double[::1] t_grid):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    cdef Py_ssize_t ns = s_grid.shape[0], nt = t_grid.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] res = np.zeros((n, ns, nt), dtype=np.float64)
    cdef double[:, :, ::1] out = res
    cdef Py_ssize_t p, k, i, j
    with nogil:
        for p in range(n):
            for k in range(offsets[p], offsets[p + 1]):
                i = _first_ge(s_grid, x[k])
                j = _first_ge(t_grid, y[k])
                if i < ns and j < nt:
                    out[p, i, j] = out[p, i, j] + w[k]
            for i in range(ns):
                for j in range(1, nt):
                    out[p, i, j] = out[p, i, j] + out[p, i, j - 1]
            for i in range(1, ns):
                for j in range(nt):
                    out[p, i, j] = out[p, i, j] + out[p, i - 1, j]
    return res
