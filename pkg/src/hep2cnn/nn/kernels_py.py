"""Pure NumPy implementations of the hot kernels.

Used when the compiled extension is unavailable, and as the reference the
compiled path is benchmarked and cross-checked against.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, kh, kw, stride, ho, wo):
    n_img, n_ch = xp.shape[:2]
    cols = np.empty((n_img, ho, wo, n_ch, kh, kw), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
            cols[..., i, j] = patch.transpose(0, 2, 3, 1)
    return cols.reshape(n_img * ho * wo, n_ch * kh * kw)


def col2im(cols, n_img, n_ch, hp, wp, kh, kw, stride, ho, wo):
    cols = cols.reshape(n_img, ho, wo, n_ch, kh, kw)
    dxp = np.zeros((n_img, n_ch, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                cols[..., i, j].transpose(0, 3, 1, 2)
            )
    return dxp


def maxpool_forward(x, window, stride, ho, wo):
    w = x.shape[3]
    views = sliding_window_view(x, (window, window), axis=(2, 3))
    views = views[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = views.reshape(*views.shape[:4], window * window)
    local = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    rows = np.arange(ho)[:, None] * stride + local // window
    cols = np.arange(wo)[None, :] * stride + local % window
    return np.ascontiguousarray(out), (rows * w + cols).astype(np.int64)


def maxpool_backward(arg, grad_out, h, w):
    n_img, n_ch = grad_out.shape[:2]
    dx = np.zeros((n_img * n_ch, h * w), dtype=grad_out.dtype)
    plane = np.repeat(np.arange(n_img * n_ch), arg.shape[2] * arg.shape[3])
    np.add.at(dx, (plane, arg.reshape(-1)), grad_out.reshape(-1))
    return dx.reshape(n_img, n_ch, h, w)
