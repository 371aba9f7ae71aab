"""Forward and backward passes for the fixed layer vocabulary.

All tensors are NumPy arrays in NCHW order. Every function is pure: inputs
are never modified and fresh arrays are returned.
"""

from collections import namedtuple

import numpy as np

from ..errors import ConfigError, DataError
from . import kernels

PoolIndices = namedtuple("PoolIndices", ["argmax", "input_shape"])


def output_size(size, kernel, stride, padding, layer=None, what="kernel"):
    """Spatial output length of a sliding window; raises on a bad geometry."""
    span = size + 2 * padding - kernel
    if span < 0:
        raise ConfigError(
            f"{what} {kernel} larger than padded input {size + 2 * padding}",
            layer_index=layer,
        )
    if span % stride:
        raise ConfigError(
            f"non-integral output size ({size} + 2*{padding} - {kernel}) / {stride} + 1",
            layer_index=layer,
        )
    return span // stride + 1


def _check4(x, name, layer):
    if x.ndim != 4:
        raise ConfigError(f"{name} must be 4-D (n, c, h, w), got shape {x.shape}",
                          layer_index=layer)


def _pad(x, padding):
    if padding == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _patches(x, kh, kw, stride, padding, ho, wo):
    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        n, c = x.shape[:2]
        return np.ascontiguousarray(x.transpose(0, 2, 3, 1)).reshape(n * ho * wo, c)
    return kernels.im2col(_pad(x, padding), kh, kw, stride, ho, wo)


def conv_forward(x, weights, bias, stride=1, padding=0, layer=None, return_cols=False):
    """Cross-correlation of ``x`` with ``weights`` plus a per-channel bias.

    Parameters
    ----------
    x : ndarray, shape (n, c_in, h, w)
    weights : ndarray, shape (c_out, c_in, kh, kw)
    bias : ndarray, shape (c_out,)
    stride, padding : int
    layer : int, optional
        Layer index reported in configuration errors.
    return_cols : bool
        Also return the patch matrix so the backward pass can reuse it.

    Returns
    -------
    ndarray, shape (n, c_out, h_out, w_out)
    """
    _check4(x, "conv input", layer)
    _check4(weights, "conv weights", layer)
    n, c, h, w = x.shape
    c_out, c_in, kh, kw = weights.shape
    if c_in != c:
        raise ConfigError(f"weights expect {c_in} input channels, input has {c}",
                          layer_index=layer)
    if bias.shape != (c_out,):
        raise ConfigError(f"bias shape {bias.shape} != ({c_out},)", layer_index=layer)
    ho = output_size(h, kh, stride, padding, layer)
    wo = output_size(w, kw, stride, padding, layer)
    cols = _patches(x, kh, kw, stride, padding, ho, wo)
    out = cols @ weights.reshape(c_out, -1).T
    out += bias
    out = np.ascontiguousarray(out.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2))
    if return_cols:
        return out, cols
    return out


def conv_backward(x, weights, grad_out, stride=1, padding=0, layer=None, cols=None):
    """Gradients of a convolution with respect to input, weights and bias."""
    _check4(x, "conv input", layer)
    n, c, h, w = x.shape
    c_out, c_in, kh, kw = weights.shape
    ho = output_size(h, kh, stride, padding, layer)
    wo = output_size(w, kw, stride, padding, layer)
    if grad_out.shape != (n, c_out, ho, wo):
        raise ConfigError(
            f"grad_out shape {grad_out.shape} != forward output {(n, c_out, ho, wo)}",
            layer_index=layer,
        )
    if cols is None:
        cols = _patches(x, kh, kw, stride, padding, ho, wo)
    g = np.ascontiguousarray(grad_out.transpose(0, 2, 3, 1)).reshape(-1, c_out)
    grad_w = (g.T @ cols).reshape(weights.shape)
    grad_b = g.sum(axis=0)
    dcols = np.ascontiguousarray(g @ weights.reshape(c_out, -1))
    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        grad_x = np.ascontiguousarray(dcols.reshape(n, ho, wo, c).transpose(0, 3, 1, 2))
    else:
        hp, wp = h + 2 * padding, w + 2 * padding
        dxp = kernels.col2im(dcols, n, c, hp, wp, kh, kw, stride, ho, wo)
        grad_x = np.ascontiguousarray(dxp[:, :, padding:padding + h, padding:padding + w])
    return grad_x, grad_w, grad_b


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    # derivative at exactly 0 is taken as 0
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def maxpool_forward(x, window, stride, layer=None):
    """Max pooling; returns the pooled tensor and the argmax bookkeeping.

    Ties resolve to the first maximum in row-major order within the window.
    """
    _check4(x, "pool input", layer)
    n, c, h, w = x.shape
    ho = output_size(h, window, stride, 0, layer, what="window")
    wo = output_size(w, window, stride, 0, layer, what="window")
    out, arg = kernels.maxpool_forward(np.ascontiguousarray(x), window, stride, ho, wo)
    return out, PoolIndices(arg, x.shape)


def maxpool_backward(indices, grad_out):
    _, _, h, w = indices.input_shape
    return kernels.maxpool_backward(indices.argmax, np.ascontiguousarray(grad_out), h, w)


def avgpool_forward(x, window, stride, layer=None):
    _check4(x, "pool input", layer)
    n, c, h, w = x.shape
    ho = output_size(h, window, stride, 0, layer, what="window")
    wo = output_size(w, window, stride, 0, layer, what="window")
    out = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for i in range(window):
        for j in range(window):
            out += x[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return out / (window * window)


def avgpool_backward(grad_out, input_shape, window, stride):
    n, c, ho, wo = grad_out.shape
    dx = np.zeros(input_shape, dtype=grad_out.dtype)
    share = grad_out / (window * window)
    for i in range(window):
        for j in range(window):
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += share
    return dx


def fc_forward(x, weights, bias):
    """Affine map ``x @ weights.T + bias`` with ``weights`` of shape (out, in)."""
    return x @ weights.T + bias


def fc_backward(x, weights, grad_out):
    return grad_out @ weights, grad_out.T @ x, grad_out.sum(axis=0)


def _check_labels(labels, k):
    labels = np.asarray(labels)
    bad = np.flatnonzero((labels < 0) | (labels >= k))
    if bad.size:
        i = int(bad[0])
        raise DataError(f"label {labels[i]} outside [0, {k})", record_index=i)
    return labels.astype(np.int64)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent_forward(logits, labels):
    """Mean cross-entropy of softmax(logits) against integer labels.

    Returns
    -------
    loss : float
    probs : ndarray, shape (n, k)
    """
    n, k = logits.shape
    labels = _check_labels(labels, k)
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    logp = z[np.arange(n), labels] - log_norm
    probs = np.exp(z - log_norm[:, None])
    return float(-logp.mean()), probs


def softmax_xent_backward(probs, labels):
    n, k = probs.shape
    labels = _check_labels(labels, k)
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1
    return grad / n
