# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: convolution forward and both backward passes.

Direct nested loops over NCHW float64 arrays.  The NumPy fallback in
gradfilt._kernels_np mirrors these signatures exactly.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv2d_forward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] k,
                   const double[::1] bias, int pad):
    cdef Py_ssize_t n_b = x.shape[0], c_in = x.shape[1]
    cdef Py_ssize_t h_in = x.shape[2], w_in = x.shape[3]
    cdef Py_ssize_t c_out = k.shape[0], kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t h_out = h_in + 2 * pad - kh + 1
    cdef Py_ssize_t w_out = w_in + 2 * pad - kw + 1
    out = np.empty((n_b, c_out, h_out, w_out))
    cdef double[:, :, :, ::1] y = out
    cdef Py_ssize_t n, co, ci, i, j, u, v, a, b
    cdef double acc
    for n in range(n_b):
        for co in range(c_out):
            for i in range(h_out):
                for j in range(w_out):
                    acc = bias[co]
                    for ci in range(c_in):
                        for u in range(kh):
                            a = i + u - pad
                            if a < 0 or a >= h_in:
                                continue
                            for v in range(kw):
                                b = j + v - pad
                                if 0 <= b < w_in:
                                    acc += x[n, ci, a, b] * k[co, ci, u, v]
                    y[n, co, i, j] = acc
    return out


def conv2d_backward_input(const double[:, :, :, ::1] gy, const double[:, :, :, ::1] k,
                          int pad, int hx, int wx):
    cdef Py_ssize_t n_b = gy.shape[0], c_out = gy.shape[1]
    cdef Py_ssize_t hy = gy.shape[2], wy = gy.shape[3]
    cdef Py_ssize_t c_in = k.shape[1], kh = k.shape[2], kw = k.shape[3]
    out = np.empty((n_b, c_in, hx, wx))
    cdef double[:, :, :, ::1] gx = out
    cdef Py_ssize_t n, ci, co, h, w, u, v, a, b
    cdef double acc
    # gx[h,w] = sum over taps of k[co,ci,u,v] * gy[h+pad-u, w+pad-v]
    for n in range(n_b):
        for ci in range(c_in):
            for h in range(hx):
                for w in range(wx):
                    acc = 0.0
                    for co in range(c_out):
                        for u in range(kh):
                            a = h + pad - u
                            if a < 0 or a >= hy:
                                continue
                            for v in range(kw):
                                b = w + pad - v
                                if 0 <= b < wy:
                                    acc += k[co, ci, u, v] * gy[n, co, a, b]
                    gx[n, ci, h, w] = acc
    return out


def conv2d_backward_kernel(const double[:, :, :, ::1] gy, const double[:, :, :, ::1] x,
                           int pad, int kh, int kw):
    cdef Py_ssize_t n_b = gy.shape[0], c_out = gy.shape[1]
    cdef Py_ssize_t hy = gy.shape[2], wy = gy.shape[3]
    cdef Py_ssize_t c_in = x.shape[1], h_in = x.shape[2], w_in = x.shape[3]
    out = np.empty((c_out, c_in, kh, kw))
    cdef double[:, :, :, ::1] gk = out
    cdef Py_ssize_t n, co, ci, u, v, i, j, a, b
    cdef double acc
    for co in range(c_out):
        for ci in range(c_in):
            for u in range(kh):
                for v in range(kw):
                    acc = 0.0
                    for n in range(n_b):
                        for i in range(hy):
                            a = i + u - pad
                            if a < 0 or a >= h_in:
                                continue
                            for j in range(wy):
                                b = j + v - pad
                                if 0 <= b < w_in:
                                    acc += x[n, ci, a, b] * gy[n, co, i, j]
                    gk[co, ci, u, v] = acc
    return out
