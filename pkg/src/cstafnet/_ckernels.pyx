# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel core.

Implements the same accumulation-order contract as _pykernels (see the
docstring there); compiled with -ffp-contract=off so the per-element
floating-point chains, and therefore the results, are bit-identical to
the numpy fallback.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def matmul(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    out_arr = np.zeros((m, n))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, p
    cdef double aij
    for i in range(m):
        for j in range(k):
            aij = a[i, j]
            for p in range(n):
                out[i, p] += aij * b[j, p]
    return out_arr


def conv1d_fwd(double[:, :, ::1] xp, double[:, :, ::1] w, Py_ssize_t t_out):
    cdef Py_ssize_t batch = xp.shape[0], c_in = xp.shape[2]
    cdef Py_ssize_t k = w.shape[0], filters = w.shape[2]
    y_arr = np.zeros((batch, t_out, filters))
    cdef double[:, :, ::1] y = y_arr
    cdef Py_ssize_t b, j, c, t, f
    cdef double xv
    for b in range(batch):
        for j in range(k):
            for c in range(c_in):
                for t in range(t_out):
                    xv = xp[b, t + j, c]
                    for f in range(filters):
                        y[b, t, f] += xv * w[j, c, f]
    return y_arr


def conv1d_bwd_x(double[:, :, ::1] gy, double[:, :, ::1] w):
    cdef Py_ssize_t batch = gy.shape[0], t_out = gy.shape[1], filters = gy.shape[2]
    cdef Py_ssize_t k = w.shape[0], c_in = w.shape[1]
    gxp_arr = np.zeros((batch, t_out + k - 1, c_in))
    cdef double[:, :, ::1] gxp = gxp_arr
    cdef Py_ssize_t b, j, f, t, c
    cdef double gv
    for b in range(batch):
        for j in range(k):
            for f in range(filters):
                for t in range(t_out):
                    gv = gy[b, t, f]
                    for c in range(c_in):
                        gxp[b, t + j, c] += gv * w[j, c, f]
    return gxp_arr


def conv1d_bwd_w(double[:, :, ::1] xp, double[:, :, ::1] gy):
    cdef Py_ssize_t batch = gy.shape[0], t_out = gy.shape[1], filters = gy.shape[2]
    cdef Py_ssize_t c_in = xp.shape[2]
    cdef Py_ssize_t k = xp.shape[1] - t_out + 1
    gw_arr = np.zeros((k, c_in, filters))
    cdef double[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t j, b, t, c, f
    cdef double xv
    for j in range(k):
        for b in range(batch):
            for t in range(t_out):
                for c in range(c_in):
                    xv = xp[b, t + j, c]
                    for f in range(filters):
                        gw[j, c, f] += xv * gy[b, t, f]
    return gw_arr
