"""Numba vs numpy timings for the convolution kernels and a full attack iteration.

    python benchmarks/bench_kernels.py [--repeat 20] [--size 128]

Both backends are run in one process (the ``backend=`` argument bypasses the
``SEGCONSIST_DISABLE_NUMBA`` switch) and their outputs are compared first.
"""
import argparse
import time

import numpy as np

from segconsist import kernels
from segconsist.attacks import DagObjective
from segconsist.model import ToyConvModel

BACKENDS = ("numba", "numpy")


def _time(fn, repeat):
    fn()  # warm-up, includes JIT compilation
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def kernel_cases(size, rng):
    for cin, cout in ((3, 8), (8, 8)):
        xp = rng.random((cin, size + 4, size + 4))
        w = rng.normal(size=(cout, cin, 5, 5))
        g = rng.normal(size=(cout, size, size))
        yield f"conv_valid {cin}->{cout}", lambda b, xp=xp, w=w: kernels.conv_valid(xp, w, b)
        yield f"conv_input_grad {cout}->{cin}", lambda b, g=g, w=w: kernels.conv_input_grad(g, w, b)
        yield f"conv_weight_grad {cin}->{cout}", lambda b, xp=xp, g=g: kernels.conv_weight_grad(xp, g, 5, 5, b)


def model_cases(size, rng):
    img = rng.random((size, size, 3))
    labels = rng.integers(0, 5, (size, size))
    models = {b: ToyConvModel(seed=0, backend=b) for b in BACKENDS}

    def forward(b):
        return models[b].logits(img)

    def attack_step(b):
        return models[b].input_gradient(img, DagObjective(labels, np.ones((size, size), bool), "margin"))[1]

    yield "model forward", forward
    yield "attack iteration (fwd + input grad)", attack_step


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--size", type=int, default=128)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'case':40s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fn in list(kernel_cases(args.size, rng)) + list(model_cases(args.size, rng)):
        a, b = fn("numba"), fn("numpy")
        if not np.allclose(a, b, rtol=1e-9, atol=1e-9):
            raise AssertionError(f"{name}: backends disagree by {np.max(np.abs(a - b)):.3g}")
        t = {be: _time(lambda be=be: fn(be), args.repeat) for be in BACKENDS}
        print(f"{name:40s} {t['numba']:10.3f} {t['numpy']:10.3f} {t['numpy'] / t['numba']:7.2f}x")


if __name__ == "__main__":
    main()
