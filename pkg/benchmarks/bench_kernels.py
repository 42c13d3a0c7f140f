"""Time the compiled and numpy kernel backends on representative shapes.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from emevlab import kernels
from emevlab.svd import svd_transform


def _conv_case(rng):
    x = rng.standard_normal((64, 4, 8, 8, 2)).astype(np.float32)
    w = rng.standard_normal((3, 3, 3, 2, 8)).astype(np.float32)
    b = np.zeros(8, dtype=np.float32)
    return x, w, b


def bench(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--svd-count", type=int, default=200)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(0)
    x, w, b = _conv_case(rng)
    gout = rng.standard_normal((64, 4, 8, 8, 8)).astype(np.float32)
    h = (rng.standard_normal((args.svd_count, 4, 64)) + 1j * rng.standard_normal((args.svd_count, 4, 64)))
    h_small = (rng.standard_normal((2000, 2, 8)) + 1j * rng.standard_normal((2000, 2, 8)))

    cases = {
        "conv3d forward (64x4x8x8x2 -> 8)": lambda: kernels.conv_forward(x, w, b),
        "conv3d backward": lambda: kernels.conv_backward(x, w, gout),
        f"svd {args.svd_count} x (4x64)": lambda: svd_transform(h),
        "svd 2000 x (2x8)": lambda: svd_transform(h_small),
    }
    backends = kernels.available_backends()
    print(f"{'case':<36}" + "".join(f"{name:>12}" for name in backends) + "     speedup")
    for label, fn in cases.items():
        times = {}
        for name in backends:
            with kernels.use_backend(name):
                times[name] = bench(fn, args.repeat)
        speed = (f"{times['python'] / times['cython']:>11.1f}x"
                 if {"python", "cython"} <= set(times) else "")
        print(f"{label:<36}" + "".join(f"{times[n]:>11.4f}s" for n in backends) + speed)


if __name__ == "__main__":
    main()
