# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops for convolution and pooling.

Each routine reproduces the accumulation order of the NumPy fallback in
``kernels_py`` so that both backends give bit-identical results.
"""

import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] xp, int kh, int kw, int stride, int ho, int wo):
    """Patch matrix of shape (N*Ho*Wo, C*kh*kw) from a padded NCHW array."""
    cdef Py_ssize_t n_img = xp.shape[0], n_ch = xp.shape[1]
    cdef Py_ssize_t n, c, y, x, i, j, row, col
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n_img * ho * wo, n_ch * kh * kw), dtype=dtype)
    cdef real[:, ::1] cols = out
    with nogil:
        for n in range(n_img):
            for y in range(ho):
                for x in range(wo):
                    row = (n * ho + y) * wo + x
                    col = 0
                    for c in range(n_ch):
                        for i in range(kh):
                            for j in range(kw):
                                cols[row, col] = xp[n, c, y * stride + i, x * stride + j]
                                col += 1
    return out


def col2im(real[:, ::1] cols, Py_ssize_t n_img, Py_ssize_t n_ch,
           Py_ssize_t hp, Py_ssize_t wp, int kh, int kw, int stride,
           int ho, int wo):
    """Scatter-add a patch-gradient matrix back onto the padded input grid."""
    cdef Py_ssize_t n, c, y, x, i, j, row, col
    cdef Py_ssize_t ck = kh * kw
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n_img, n_ch, hp, wp), dtype=dtype)
    cdef real[:, :, :, ::1] dxp = out
    with nogil:
        for i in range(kh):
            for j in range(kw):
                for n in range(n_img):
                    for c in range(n_ch):
                        col = c * ck + i * kw + j
                        for y in range(ho):
                            row = (n * ho + y) * wo
                            for x in range(wo):
                                dxp[n, c, y * stride + i, x * stride + j] += cols[row + x, col]
    return out


def maxpool_forward(real[:, :, :, ::1] x, int window, int stride, int ho, int wo):
    """Windowed maximum plus the flat in-plane index of the first maximum."""
    cdef Py_ssize_t n_img = x.shape[0], n_ch = x.shape[1], w = x.shape[3]
    cdef Py_ssize_t n, c, y, xx, i, j, best_idx
    cdef real best, v
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n_img, n_ch, ho, wo), dtype=dtype)
    arg = np.empty((n_img, n_ch, ho, wo), dtype=np.int64)
    cdef real[:, :, :, ::1] o = out
    cdef cnp.int64_t[:, :, :, ::1] a = arg
    with nogil:
        for n in range(n_img):
            for c in range(n_ch):
                for y in range(ho):
                    for xx in range(wo):
                        best = x[n, c, y * stride, xx * stride]
                        best_idx = (y * stride) * w + xx * stride
                        for i in range(window):
                            for j in range(window):
                                v = x[n, c, y * stride + i, xx * stride + j]
                                if v > best:
                                    best = v
                                    best_idx = (y * stride + i) * w + xx * stride + j
                        o[n, c, y, xx] = best
                        a[n, c, y, xx] = best_idx
    return out, arg


def maxpool_backward(cnp.int64_t[:, :, :, ::1] arg, real[:, :, :, ::1] grad_out,
                     Py_ssize_t h, Py_ssize_t w):
    """Route each output gradient to its recorded argmax position."""
    cdef Py_ssize_t n_img = grad_out.shape[0], n_ch = grad_out.shape[1]
    cdef Py_ssize_t ho = grad_out.shape[2], wo = grad_out.shape[3]
    cdef Py_ssize_t n, c, y, x, idx
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n_img, n_ch, h * w), dtype=dtype)
    cdef real[:, :, ::1] dx = out
    with nogil:
        for n in range(n_img):
            for c in range(n_ch):
                for y in range(ho):
                    for x in range(wo):
                        idx = arg[n, c, y, x]
                        dx[n, c, idx] += grad_out[n, c, y, x]
    return out.reshape((n_img, n_ch, h, w))
