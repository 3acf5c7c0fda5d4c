"""Compare the compiled and numpy look-ahead kernels.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Times ``lookahead_entropy_sums`` and a full ``select_next`` call for a
range of node / candidate counts and checks that both backends agree.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from clover import _core
from clover.acquisition import C_APPROX, XBAR


def random_problem(n_i: int, n_a: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    var = rng.uniform(0.01, 1.0, n_i)
    mu = rng.normal(0.0, 1.0, n_i)
    denom = rng.uniform(0.05, 1.0, n_a)
    # |cross| <= sqrt(var * denom) keeps the fantasy variance non-negative
    cross = rng.uniform(-0.9, 0.9, (n_i, n_a)) * np.sqrt(np.outer(var, denom))
    weights = np.full(n_i, 1.0 / n_i)
    return cross, var, mu, denom, weights


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _core.compiled is None:
        print("compiled backend not built; only the numpy backend is available")
    print(f"{'nodes':>6} {'cands':>6} {'numpy [ms]':>11} {'cython [ms]':>12} {'speedup':>8} {'max rel diff':>13}")
    for n_i, n_a in [(500, 300), (2500, 900), (2500, 2700), (10000, 900)]:
        prob = random_problem(n_i, n_a)
        call = lambda be: be.lookahead_entropy_sums(*prob, 2.0, True, XBAR, C_APPROX)
        t_np = best_of(lambda: call(_core.fallback), args.repeat)
        ref = call(_core.fallback)
        if _core.compiled is not None:
            t_cy = best_of(lambda: call(_core.compiled), args.repeat)
            diff = np.max(np.abs(call(_core.compiled) - ref) / np.maximum(np.abs(ref), 1e-300))
            print(f"{n_i:6d} {n_a:6d} {1e3 * t_np:11.2f} {1e3 * t_cy:12.2f} {t_np / t_cy:8.1f} {diff:13.2e}")
        else:
            print(f"{n_i:6d} {n_a:6d} {1e3 * t_np:11.2f} {'-':>12} {'-':>8} {'-':>13}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
