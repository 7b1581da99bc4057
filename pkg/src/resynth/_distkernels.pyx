# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled distance kernels.

Hot inner loops for pairwise and query-vs-panel distances over float64
vectors. Sequential 64-bit accumulation; the numpy twin lives in
``_distkernels_py``.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

IMPLEMENTATION = "cython"


def euclidean_pair(double[::1] x, double[::1] y):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double acc = 0.0, d
    for i in range(n):
        d = x[i] - y[i]
        acc += d * d
    return sqrt(acc)


def manhattan_pair(double[::1] x, double[::1] y):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double acc = 0.0
    for i in range(n):
        acc += fabs(x[i] - y[i])
    return acc


def cosine_pair(double[::1] x, double[::1] y):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double dot = 0.0, nx2 = 0.0, ny2 = 0.0, c
    for i in range(n):
        dot += x[i] * y[i]
        nx2 += x[i] * x[i]
        ny2 += y[i] * y[i]
    if nx2 == 0.0 or ny2 == 0.0:
        raise ValueError("cosine distance is undefined for zero vectors")
    c = 1.0 - dot / sqrt(nx2 * ny2)
    return c if c > 0.0 else 0.0


def mahalanobis_diag_pair(double[::1] x, double[::1] y, double[::1] diag):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double acc = 0.0, d
    for i in range(n):
        d = x[i] - y[i]
        acc += d * d * diag[i]
    return sqrt(acc)


def mahalanobis_full_pair(double[::1] x, double[::1] y, double[:, ::1] prec):
    cdef Py_ssize_t i, j, n = x.shape[0]
    cdef double acc = 0.0, row
    for i in range(n):
        row = 0.0
        for j in range(n):
            row += prec[i, j] * (x[j] - y[j])
        acc += (x[i] - y[i]) * row
    return sqrt(acc)


def euclidean_panel(double[::1] q, double[:, ::1] panel):
    cdef Py_ssize_t r, i, m = panel.shape[0], n = panel.shape[1]
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double acc, d
    for r in range(m):
        acc = 0.0
        for i in range(n):
            d = panel[r, i] - q[i]
            acc += d * d
        out[r] = sqrt(acc)
    return out_arr


def manhattan_panel(double[::1] q, double[:, ::1] panel):
    cdef Py_ssize_t r, i, m = panel.shape[0], n = panel.shape[1]
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double acc
    for r in range(m):
        acc = 0.0
        for i in range(n):
            acc += fabs(panel[r, i] - q[i])
        out[r] = acc
    return out_arr


def cosine_panel(double[::1] q, double[:, ::1] panel):
    cdef Py_ssize_t r, i, m = panel.shape[0], n = panel.shape[1]
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double dot, nr2, nq2 = 0.0, c
    for i in range(n):
        nq2 += q[i] * q[i]
    if nq2 == 0.0:
        raise ValueError("cosine distance is undefined for zero vectors")
    for r in range(m):
        dot = 0.0
        nr2 = 0.0
        for i in range(n):
            dot += panel[r, i] * q[i]
            nr2 += panel[r, i] * panel[r, i]
        if nr2 == 0.0:
            raise ValueError("cosine distance is undefined for zero vectors")
        c = 1.0 - dot / sqrt(nr2 * nq2)
        out[r] = c if c > 0.0 else 0.0
    return out_arr


def mahalanobis_diag_panel(double[::1] q, double[:, ::1] panel, double[::1] diag):
    cdef Py_ssize_t r, i, m = panel.shape[0], n = panel.shape[1]
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double acc, d
    for r in range(m):
        acc = 0.0
        for i in range(n):
            d = panel[r, i] - q[i]
            acc += d * d * diag[i]
        out[r] = sqrt(acc)
    return out_arr


def mahalanobis_full_panel(double[::1] q, double[:, ::1] panel, double[:, ::1] prec):
    cdef Py_ssize_t r, i, j, m = panel.shape[0], n = panel.shape[1]
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double acc, row
    for r in range(m):
        acc = 0.0
        for i in range(n):
            row = 0.0
            for j in range(n):
                row += prec[i, j] * (panel[r, j] - q[j])
            acc += (panel[r, i] - q[i]) * row
        out[r] = sqrt(acc)
    return out_arr
