"""Time the compiled kernels against the numpy fallback on the hot paths.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from msdiffeo import _backend


def cases(rng):
    n = 128
    vec = rng.standard_normal((n, n, 2))
    scal = rng.standard_normal((n, n))
    pts = rng.uniform(-2, n + 1, (n * n, 2))
    x = rng.uniform(0, 1, (4096, 2))
    c = rng.uniform(0, 1, (64, 2))
    mom = rng.standard_normal((3, 64, 2))
    sig2 = np.array([0.04, 0.01, 0.0025])
    w = np.ones(3)
    return {
        "interp_scalar 128^2": lambda k: k.interp_scalar(scal, pts),
        "interp_vector 128^2": lambda k: k.interp_vector(vec, pts),
        "interp_map 128^2": lambda k: k.interp_map(vec, pts),
        "gauss_apply 4096x64x3": lambda k: k.gauss_apply(x, c, mom, sig2, w),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _backend.compiled is None:
        print("compiled kernels not built; only the numpy fallback is timed")
    rng = np.random.default_rng(0)
    print(f"{'case':<24} {'numpy [ms]':>11} {'cython [ms]':>12} {'speedup':>8} {'max diff':>10}")
    for name, fn in cases(rng).items():
        t_np = min(timeit.repeat(lambda: fn(_backend.fallback), number=1, repeat=args.repeat)) * 1e3
        if _backend.compiled is None:
            print(f"{name:<24} {t_np:>11.2f} {'-':>12} {'-':>8} {'-':>10}")
            continue
        t_c = min(timeit.repeat(lambda: fn(_backend.compiled), number=1, repeat=args.repeat)) * 1e3
        diff = np.max(np.abs(fn(_backend.fallback) - fn(_backend.compiled)))
        print(f"{name:<24} {t_np:>11.2f} {t_c:>12.2f} {t_np / t_c:>7.1f}x {diff:>10.2e}")


if __name__ == "__main__":
    main()
