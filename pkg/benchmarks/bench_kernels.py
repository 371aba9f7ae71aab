"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--batch 32] [--repeat 5]

Reports the best of ``--repeat`` runs for each kernel at the shapes of the
default network, then one full forward/backward pass with each backend.
"""

import argparse
import timeit

import numpy as np

from hep2cnn.nn import config as C
from hep2cnn.nn import kernels
from hep2cnn.nn.network import init_params, loss_and_grads

KERNEL_NAMES = ("im2col", "col2im", "maxpool_forward", "maxpool_backward")


def kernel_cases(batch, rng):
    # first conv (1 -> 32, 5x5 on 60x60) and first pool (32 x 56x56)
    x = rng.random((batch, 1, 60, 60), dtype=np.float32)
    cols = rng.random((batch * 56 * 56, 25), dtype=np.float32)
    act = rng.random((batch, 32, 56, 56), dtype=np.float32)
    return {
        "im2col": lambda k: k.im2col(x, 5, 5, 1, 56, 56),
        "col2im": lambda k: k.col2im(cols, batch, 1, 60, 60, 5, 5, 1, 56, 56),
        "maxpool_forward": lambda k: k.maxpool_forward(act, 2, 2, 28, 28),
        "maxpool_backward": _pool_backward(act),
    }


def _pool_backward(act):
    cache = {}

    def run(k):
        if k not in cache:
            out, arg = k.maxpool_forward(act, 2, 2, 28, 28)
            cache[k] = (arg, np.ones_like(out))
        arg, grad = cache[k]
        return k.maxpool_backward(arg, grad, 56, 56)

    return run


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def network_step(batch, backend, repeat, rng):
    cfg = C.default_network()
    params = init_params(cfg, 0)
    x = rng.random((batch, 1, 60, 60), dtype=np.float32)
    y = rng.integers(0, 6, batch)
    saved = {name: getattr(kernels, name) for name in KERNEL_NAMES}
    for name in KERNEL_NAMES:
        setattr(kernels, name, getattr(backend, name))
    try:
        return best(lambda: loss_and_grads(cfg, params, x, y), repeat)
    finally:
        for name, fn in saved.items():
            setattr(kernels, name, fn)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=32)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    names = kernels.available_backends()
    if "cython" not in names:
        print("compiled extension not built; only the fallback is available")
    backends = {n: kernels.get_backend(n) for n in names}
    rng = np.random.default_rng(0)
    cases = kernel_cases(args.batch, rng)

    print(f"batch {args.batch}, best of {args.repeat}")
    print(f"{'kernel':<20}" + "".join(f"{n:>12}" for n in names) + f"{'speedup':>10}")
    rows = [(name, lambda k, fn=fn: fn(k)) for name, fn in cases.items()]
    rows.append(("network step", None))
    for name, fn in rows:
        if fn is None:
            times = [network_step(args.batch, backends[n], args.repeat, rng) for n in names]
        else:
            times = [best(lambda k=backends[n]: fn(k), args.repeat) for n in names]
        ratio = f"{times[0] / times[-1]:>9.1f}x" if len(times) > 1 else ""
        print(f"{name:<20}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times) + ratio)


if __name__ == "__main__":
    main()
