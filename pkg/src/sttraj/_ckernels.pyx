# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Same signatures and semantics as ``_kernels_py``."""
import numpy as np
from libc.math cimport exp


def conv_time_forward(double[:, :, ::1] x, double[:, :, ::1] w, double[::1] b):
    cdef Py_ssize_t cin = x.shape[0], length = x.shape[1], n = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t pad = (k - 1) // 2
    cdef Py_ssize_t o, c, j, l, src, p
    cdef double wv
    out_arr = np.empty((cout, length, n), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    with nogil:
        for o in range(cout):
            for l in range(length):
                for p in range(n):
                    out[o, l, p] = b[o]
            for c in range(cin):
                for j in range(k):
                    wv = w[o, c, j]
                    for l in range(length):
                        src = l + j - pad
                        if src < 0 or src >= length:
                            continue
                        for p in range(n):
                            out[o, l, p] += wv * x[c, src, p]
    return out_arr


def conv_time_backward(double[:, :, ::1] x, double[:, :, ::1] w, double[:, :, ::1] gout):
    cdef Py_ssize_t cin = x.shape[0], length = x.shape[1], n = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t pad = (k - 1) // 2
    cdef Py_ssize_t o, c, j, l, src, p
    cdef double wv, acc, g
    gx_arr = np.zeros((cin, length, n), dtype=np.float64)
    gw_arr = np.zeros((cout, cin, k), dtype=np.float64)
    gb_arr = np.zeros(cout, dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    with nogil:
        for o in range(cout):
            acc = 0.0
            for l in range(length):
                for p in range(n):
                    acc = acc + gout[o, l, p]
            gb[o] = acc
            for c in range(cin):
                for j in range(k):
                    wv = w[o, c, j]
                    acc = 0.0
                    for l in range(length):
                        src = l + j - pad
                        if src < 0 or src >= length:
                            continue
                        for p in range(n):
                            g = gout[o, l, p]
                            acc = acc + g * x[c, src, p]
                            gx[c, src, p] += wv * g
                    gw[o, c, j] = acc
    return gx_arr, gw_arr, gb_arr


cdef double _pair_sum(double[:, ::1] a, double[:, ::1] b, double[::1] inv,
                      double[:, ::1] ga, double[:, ::1] gb, double scale,
                      bint same) nogil:
    # Accumulates scale * d/da sum k(a_i, b_j) into ga (and d/db into gb).
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], d = a.shape[1], ns = inv.shape[0]
    cdef Py_ssize_t i, j, q, s
    cdef double d2, diff, e, kern, dk, total = 0.0
    for i in range(na):
        for j in range(nb):
            d2 = 0.0
            for q in range(d):
                diff = a[i, q] - b[j, q]
                d2 = d2 + diff * diff
            kern = 0.0
            dk = 0.0
            for s in range(ns):
                e = exp(-d2 * inv[s])
                kern = kern + e
                dk = dk + e * (2.0 * inv[s])
            total = total + kern
            for q in range(d):
                diff = a[i, q] - b[j, q]
                ga[i, q] -= scale * dk * diff
                if not same:
                    gb[j, q] += scale * dk * diff
    return total


def mmd_rbf(x, y, bandwidths):
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    inv_arr = 1.0 / (2.0 * np.asarray(bandwidths, dtype=np.float64) ** 2)
    cdef double[::1] inv = inv_arr
    cdef Py_ssize_t m = xv.shape[0], l = yv.shape[0], d = xv.shape[1]
    gx_arr = np.zeros((m, d), dtype=np.float64)
    gy_arr = np.zeros((l, d), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef double[:, ::1] gy = gy_arr
    cdef double mm = <double>(m * m), ll = <double>(l * l), ml = <double>(m * l)
    cdef double sxx, syy, sxy
    with nogil:
        sxx = _pair_sum(xv, xv, inv, gx, gx, 2.0 / mm, True)
        syy = _pair_sum(yv, yv, inv, gy, gy, 2.0 / ll, True)
        sxy = _pair_sum(xv, yv, inv, gx, gy, -2.0 / ml, False)
    value = sxx / mm + syy / ll - 2.0 * sxy / ml
    return float(value), gx_arr, gy_arr
