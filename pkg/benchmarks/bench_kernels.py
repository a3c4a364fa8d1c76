"""Time the numpy and numba implementations of every hot kernel.

    python3 benchmarks/bench_kernels.py [--n 4000] [--queries 2000] [--repeat 5]

Numba functions are called once before timing so compilation is excluded.
Each row also reports the largest relative difference between the two
backends' outputs (index and count kernels agree exactly; floating sums differ
by a few ulps because ``exp`` and summation order differ).
"""

import argparse
import timeit

import numpy as np

from cdeshift import _kernels


def cases(n, m, d, rng):
    X = rng.normal(size=(n, d))
    Q = rng.normal(size=(m, d))
    zn = rng.random((m, 40))
    wn = rng.random((m, 40))
    grid = np.linspace(0.0, 1.0, 200)
    r2 = _kernels.NUMPY_KERNELS["knn"](X, Q, 16)[1]
    return {
        "sqdist": (Q, X),
        "knn": (X, Q, 32),
        "radius_count": (X, Q, r2),
        "gaussian_gram": (Q, X, 0.5),
        "kernel_grid": (zn, wn, grid, 0.002),
        "hist_grid": (zn, wn, grid, 10),
    }


def max_rel_diff(a, b):
    if isinstance(a, tuple):
        return max(max_rel_diff(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a), np.finfo(float).tiny)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=4000, help="training rows")
    ap.add_argument("--queries", type=int, default=2000)
    ap.add_argument("--d", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if not _kernels.NUMBA_KERNELS:
        raise SystemExit("numba backend unavailable (not installed or CDESHIFT_DISABLE_NUMBA set)")
    rng = np.random.default_rng(args.seed)
    print(f"n={args.n} queries={args.queries} d={args.d}, best of {args.repeat}")
    print(f"{'kernel':<14}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}{'max rel diff':>14}")
    for name, a in cases(args.n, args.queries, args.d, rng).items():
        f_np, f_nb = _kernels.NUMPY_KERNELS[name], _kernels.NUMBA_KERNELS[name]
        f_nb(*a)  # compile
        t_np = min(timeit.repeat(lambda: f_np(*a), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: f_nb(*a), number=1, repeat=args.repeat))
        print(f"{name:<14}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>9.1f}x{max_rel_diff(f_np(*a), f_nb(*a)):>14.1e}")


if __name__ == "__main__":
    main()
