"""Benchmark the assignment-problem kernel: numba JIT vs pure-numpy fallback.

The Hungarian/shortest-augmenting-path solver in ``trainstab.lap`` is the one
scalar-loop-bound kernel in the package (everything else is BLAS-dominated
matmuls, which numba cannot improve).  This script times the same source
compiled with numba against the plain-Python interpretation of it, across the
matrix sizes weight matching actually uses.

Run:
    python3 benchmarks/bench_lap.py

The fallback path used in production is selected with TRAINSTAB_NUMBA=0; here
both variants are timed in-process so the comparison shares inputs exactly.
"""

from __future__ import annotations

import time

import numpy as np

from trainstab.lap import _lap_min_kernel

try:
    from numba import njit

    _jit = njit(cache=True)(_lap_min_kernel)
    HAVE_NUMBA = True
except ImportError:
    _jit = None
    HAVE_NUMBA = False

SIZES = [16, 32, 64, 128]
REPEATS = 3


def _time(fn, costs) -> float:
    best = float("inf")
    for _ in range(REPEATS):
        t0 = time.perf_counter()
        for c in costs:
            fn(c)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    gen = np.random.default_rng(0)
    if HAVE_NUMBA:
        _jit(np.zeros((2, 2)))  # compile outside the timed region
    print(f"{'n':>5} {'pure (ms)':>12} {'numba (ms)':>12} {'speedup':>9}")
    for n in SIZES:
        costs = [np.ascontiguousarray(gen.normal(size=(n, n))) for _ in range(3)]
        t_pure = _time(_lap_min_kernel, costs)
        if HAVE_NUMBA:
            t_jit = _time(_jit, costs)
            for c in costs:  # both variants must agree exactly
                assert np.array_equal(_lap_min_kernel(c), _jit(c))
            print(f"{n:>5} {1e3 * t_pure:>12.3f} {1e3 * t_jit:>12.3f} "
                  f"{t_pure / t_jit:>8.1f}x")
        else:
            print(f"{n:>5} {1e3 * t_pure:>12.3f} {'n/a':>12} {'n/a':>9}")


if __name__ == "__main__":
    main()
