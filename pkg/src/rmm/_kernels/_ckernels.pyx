# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the convolution unfold/fold and Haar kernels."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(const double[:, :, :, ::1] xpad, int k, int stride, int ho, int wo):
    cdef Py_ssize_t n = xpad.shape[0], c = xpad.shape[1]
    cdef Py_ssize_t ncols = n * ho * wo
    out_arr = np.empty((c * k * k, ncols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t ci, ki, kj, ni, i, j, row, col, r0
    with nogil:
        for ci in range(c):
            for ki in range(k):
                for kj in range(k):
                    row = (ci * k + ki) * k + kj
                    col = 0
                    for ni in range(n):
                        for i in range(ho):
                            r0 = i * stride + ki
                            for j in range(wo):
                                out[row, col] = xpad[ni, ci, r0, j * stride + kj]
                                col += 1
    return out_arr


def col2im(const double[:, ::1] cols, int n, int c, int hp, int wp, int k, int stride,
           int ho, int wo):
    out_arr = np.zeros((n, c, hp, wp), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t ci, ki, kj, ni, i, j, row, col, r0
    with nogil:
        for ci in range(c):
            for ki in range(k):
                for kj in range(k):
                    row = (ci * k + ki) * k + kj
                    col = 0
                    for ni in range(n):
                        for i in range(ho):
                            r0 = i * stride + ki
                            for j in range(wo):
                                out[ni, ci, r0, j * stride + kj] += cols[row, col]
                                col += 1
    return out_arr


def haar_analysis(const double[:, :, ::1] x):
    cdef Py_ssize_t m = x.shape[0], h = x.shape[1] // 2, w = x.shape[2] // 2
    out_arr = np.empty((m, 4, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t mi, i, j
    cdef double a, b, c, d
    with nogil:
        for mi in range(m):
            for i in range(h):
                for j in range(w):
                    a = x[mi, 2 * i, 2 * j]
                    b = x[mi, 2 * i, 2 * j + 1]
                    c = x[mi, 2 * i + 1, 2 * j]
                    d = x[mi, 2 * i + 1, 2 * j + 1]
                    out[mi, 0, i, j] = (a + b + c + d) * 0.5
                    out[mi, 1, i, j] = (a + b - c - d) * 0.5
                    out[mi, 2, i, j] = (a - b + c - d) * 0.5
                    out[mi, 3, i, j] = (a - b - c + d) * 0.5
    return out_arr


def haar_synthesis(const double[:, :, :, ::1] bands):
    cdef Py_ssize_t m = bands.shape[0], h = bands.shape[2], w = bands.shape[3]
    out_arr = np.empty((m, 2 * h, 2 * w), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t mi, i, j
    cdef double ll, lh, hl, hh
    with nogil:
        for mi in range(m):
            for i in range(h):
                for j in range(w):
                    ll = bands[mi, 0, i, j]
                    lh = bands[mi, 1, i, j]
                    hl = bands[mi, 2, i, j]
                    hh = bands[mi, 3, i, j]
                    out[mi, 2 * i, 2 * j] = (ll + lh + hl + hh) * 0.5
                    out[mi, 2 * i, 2 * j + 1] = (ll + lh - hl - hh) * 0.5
                    out[mi, 2 * i + 1, 2 * j] = (ll - lh + hl - hh) * 0.5
                    out[mi, 2 * i + 1, 2 * j + 1] = (ll - lh - hl + hh) * 0.5
    return out_arr
