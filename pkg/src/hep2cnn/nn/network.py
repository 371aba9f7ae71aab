"""Whole-network forward/backward passes, initialization and the SGD update.

Parameters and gradients are plain dicts ``{layer_index: (weight, bias)}``
covering the conv and fc layers of a :class:`NetworkConfig`.
"""

import numpy as np

from ..errors import ConfigError, Hep2Error, InternalError
from . import layers as L

DEFAULT_INIT_STD = 1e-3


def init_params(config, seed, std=DEFAULT_INIT_STD, dtype=np.float32):
    """Draw weights i.i.d. uniform with standard deviation ``std``; biases zero.

    The uniform half-width is ``std * sqrt(3)``. ``std="fan_in"`` uses
    ``sqrt(2 / fan_in)`` per layer instead. Layers are drawn in index order
    from one generator, so the result depends only on (config, seed).
    """
    rng = np.random.default_rng(seed)
    params = {}
    for i, (wshape, bshape) in config.param_shapes().items():
        if std == "fan_in":
            layer_std = np.sqrt(2.0 / int(np.prod(wshape[1:])))
        else:
            layer_std = float(std)
        half = layer_std * np.sqrt(3.0)
        w = rng.uniform(-half, half, size=wshape).astype(dtype)
        params[i] = (w, np.zeros(bshape, dtype=dtype))
    return params


def he_params(config, seed, dtype=np.float64):
    """Fan-in scaled initialization, used where the 1e-3 scale is too small
    for a meaningful numeric check (e.g. whole-network gradient checks)."""
    rng = np.random.default_rng(seed)
    params = {}
    for i, (wshape, bshape) in config.param_shapes().items():
        fan_in = int(np.prod(wshape[1:]))
        w = rng.standard_normal(wshape) * np.sqrt(2.0 / fan_in)
        b = rng.standard_normal(bshape) * 0.1
        params[i] = (w.astype(dtype), b.astype(dtype))
    return params


def check_params(config, params):
    """Raise :class:`ConfigError` unless ``params`` fits ``config`` exactly."""
    expected = config.param_shapes()
    if set(params) != set(expected):
        raise ConfigError(
            f"parameter layers {sorted(params)} do not match config {sorted(expected)}"
        )
    for i, (wshape, bshape) in expected.items():
        w, b = params[i]
        if w.shape != wshape or b.shape != bshape:
            raise ConfigError(
                f"parameter shapes {w.shape}/{b.shape} != {wshape}/{bshape}", layer_index=i
            )


def network_forward(config, params, batch):
    """Run ``batch`` (n, c, h, w) through the network.

    Returns
    -------
    probs : ndarray, shape (n, num_classes)
    cache : list
        Per-layer state consumed by :func:`network_backward`.
    """
    batch = np.asarray(batch)
    if batch.ndim != 4 or batch.shape[1:] != config.input_shape:
        raise ConfigError(
            f"batch shape {batch.shape} does not match input shape {config.input_shape}"
        )
    dtype = params[next(iter(params))][0].dtype if params else batch.dtype
    x = np.ascontiguousarray(batch, dtype=dtype)
    cache = []
    for i, spec in enumerate(config.layers):
        try:
            x, entry = _layer_forward(i, spec, params, x)
        except Hep2Error as exc:
            if getattr(exc, "layer_index", None) is None and isinstance(exc, ConfigError):
                raise ConfigError(str(exc), layer_index=i) from exc
            raise
        cache.append(entry)
    return x, cache


def _layer_forward(i, spec, params, x):
    kind = spec.kind
    if kind == "conv":
        w, b = params[i]
        out, cols = L.conv_forward(x, w, b, spec.stride, spec.padding, layer=i,
                                   return_cols=True)
        return out, (x, cols)
    if kind == "relu":
        return L.relu_forward(x), x
    if kind == "maxpool":
        return L.maxpool_forward(x, spec.window, spec.stride, layer=i)
    if kind == "avgpool":
        return L.avgpool_forward(x, spec.window, spec.stride, layer=i), x.shape
    if kind == "flatten":
        return x.reshape(x.shape[0], -1), x.shape
    if kind == "fc":
        w, b = params[i]
        flat = x.reshape(x.shape[0], -1)
        return L.fc_forward(flat, w, b), (x.shape, flat)
    if kind == "softmax":
        logits = x.reshape(x.shape[0], -1)
        return L.softmax(logits), (x.shape, logits)
    raise InternalError(f"unhandled layer kind {kind}")


def network_backward(config, params, cache, labels):
    """Backpropagate the mean cross-entropy loss.

    Returns
    -------
    loss : float
    grads : dict
        Same keys and shapes as ``params``.
    """
    shape, logits = cache[-1]
    loss, probs = L.softmax_xent_forward(logits, labels)
    g = L.softmax_xent_backward(probs, labels).reshape(shape)
    grads = {}
    for i in range(len(config.layers) - 2, -1, -1):
        spec = config.layers[i]
        entry = cache[i]
        kind = spec.kind
        if kind == "conv":
            x, cols = entry
            w, _ = params[i]
            g, gw, gb = L.conv_backward(x, w, g, spec.stride, spec.padding, layer=i, cols=cols)
            grads[i] = (gw, gb)
        elif kind == "relu":
            g = L.relu_backward(entry, g)
        elif kind == "maxpool":
            g = L.maxpool_backward(entry, g)
        elif kind == "avgpool":
            g = L.avgpool_backward(g, entry, spec.window, spec.stride)
        elif kind == "flatten":
            g = g.reshape(entry)
        elif kind == "fc":
            in_shape, flat = entry
            w, _ = params[i]
            gx, gw, gb = L.fc_backward(flat, w, g)
            grads[i] = (gw, gb)
            g = gx.reshape(in_shape)
    return loss, dict(sorted(grads.items()))


def loss_and_grads(config, params, batch, labels):
    _, cache = network_forward(config, params, batch)
    return network_backward(config, params, cache, labels)


def predict_proba(config, params, batch, chunk=256):
    """Class probabilities for a batch, evaluated in chunks to bound memory."""
    batch = np.asarray(batch)
    out = [network_forward(config, params, batch[s:s + chunk])[0]
           for s in range(0, len(batch), chunk)]
    if not out:
        return np.zeros((0, config.num_classes))
    return np.concatenate(out)


def sgd_step(params, grads, lr):
    """Return new parameters ``w - lr * g``; inputs are left untouched."""
    if set(params) != set(grads):
        raise InternalError(f"gradient layers {sorted(grads)} != parameter layers {sorted(params)}")
    new = {}
    for i, (w, b) in params.items():
        gw, gb = grads[i]
        if gw.shape != w.shape or gb.shape != b.shape:
            raise InternalError(f"layer {i}: gradient shape mismatch")
        new[i] = ((w - lr * gw).astype(w.dtype, copy=False),
                  (b - lr * gb).astype(b.dtype, copy=False))
    return new


def copy_params(params):
    return {i: (w.copy(), b.copy()) for i, (w, b) in params.items()}


def params_equal(a, b):
    """Bit-level equality of two parameter dicts."""
    if set(a) != set(b):
        return False
    return all(
        a[i][0].dtype == b[i][0].dtype
        and np.array_equal(a[i][0], b[i][0])
        and np.array_equal(a[i][1], b[i][1])
        for i in a
    )
