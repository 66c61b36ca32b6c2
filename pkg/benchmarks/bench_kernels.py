"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--sizes 100 200 400] [--repeats 5]
"""

import argparse
import timeit

import numpy as np

from scmtsed import _kernels_py

try:
    from scmtsed import _kernels
except ImportError:
    _kernels = None


def cases(n, rng):
    X = rng.normal(size=(n, 16))
    labels = rng.integers(0, 2, size=n)
    sq = (X * X).sum(axis=1)
    D2 = np.maximum(sq[:, None] + sq[None, :] - 2 * X @ X.T, 0.0)
    np.fill_diagonal(D2, 0.0)
    P, _ = _kernels_py.conditional_affinities(D2, 30.0)
    P = (P + P.T) / (2 * n)
    Y = rng.normal(size=(n, 2))
    return {
        "silhouette_samples": lambda m: m.silhouette_samples(X, labels, 2),
        "conditional_affinities": lambda m: m.conditional_affinities(D2, 30.0),
        "tsne_gradient": lambda m: m.tsne_gradient(P, Y, 1.0),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[100, 200, 400])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not built; only the numpy fallback is timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'n':>6}{'numpy ms':>12}{'cython ms':>12}{'speedup':>10}")
    for n in args.sizes:
        for name, fn in cases(n, rng).items():
            t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeats)) * 1e3
            if _kernels is None:
                print(f"{name:<24}{n:>6}{t_py:>12.2f}{'-':>12}{'-':>10}")
                continue
            t_c = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeats)) * 1e3
            print(f"{name:<24}{n:>6}{t_py:>12.2f}{t_c:>12.2f}{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
