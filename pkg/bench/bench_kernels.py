#!/usr/bin/env python3
"""Timing comparison: compiled encode kernels vs the numpy reference.

Runs forward and forward+backward over a grid of problem sizes and prints
a table with per-call times and the speedup. Sizes mirror realistic use:
m vertices, C mixture components, d attribute dims, field density ~0.4.

Usage: python bench/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from gic.kernels import backend_name, reference

try:
    from gic.kernels import _native as native
except ImportError:
    native = None

SIZES = [
    (10, 3, 8),
    (30, 3, 8),
    (30, 7, 16),
    (100, 7, 16),
    (100, 7, 39),
    (250, 7, 39),
]


def problem(m, C, d, seed):
    rng = np.random.default_rng(seed)
    W = rng.uniform(0.1, 1.0, size=(m, m))
    W[rng.random((m, m)) > 0.4] = 0.0
    W[np.arange(m), np.arange(m)] = rng.uniform(0.1, 1.0, size=m)
    X = rng.normal(size=(m, d))
    alpha = rng.normal(scale=0.5, size=C)
    mu = rng.normal(size=(C, d))
    ls = rng.normal(scale=0.3, size=(C, d))
    return W, X, alpha, mu, ls


def timed(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(impl, args, gF, repeats):
    fwd = timed(lambda: impl.encode_forward(*args), repeats)
    _, cache = impl.encode_forward(*args)
    bwd = timed(lambda: impl.encode_backward(cache, gF), repeats)
    return fwd, bwd


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repeats per case (best-of)")
    args = parser.parse_args()

    if native is None:
        print("compiled backend unavailable; nothing to compare")
        return 1
    print(f"default backend: {backend_name()}")
    header = (f"{'m':>5} {'C':>3} {'d':>4} | {'ref fwd':>10} {'nat fwd':>10} "
              f"{'speedup':>8} | {'ref bwd':>10} {'nat bwd':>10} {'speedup':>8}")
    print(header)
    print("-" * len(header))

    for m, C, d in SIZES:
        prob = problem(m, C, d, seed=m * 1000 + C * 10 + d)
        gF = np.random.default_rng(1).normal(size=(m, C * 2 * d))
        rf, rb = bench(reference, prob, gF, args.repeats)
        nf, nb = bench(native, prob, gF, args.repeats)

        F_ref, _ = reference.encode_forward(*prob)
        F_nat, _ = native.encode_forward(*prob)
        np.testing.assert_allclose(F_nat, F_ref, rtol=1e-10, atol=1e-12)

        print(f"{m:>5} {C:>3} {d:>4} | {rf * 1e3:>9.3f}ms {nf * 1e3:>9.3f}ms "
              f"{rf / nf:>7.1f}x | {rb * 1e3:>9.3f}ms {nb * 1e3:>9.3f}ms "
              f"{rb / nb:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
