"""Exact linear assignment via the shortest-augmenting-path Hungarian method.

The O(n^3) inner kernel is scalar-loop heavy, so it is JIT-compiled with
numba when available.  Setting TRAINSTAB_NUMBA=0 (or missing numba) selects
the pure-numpy fallback, which runs the identical source.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = ["lap_solve", "USING_NUMBA"]


def _lap_min_kernel(cost):
    """Row-to-column assignment minimizing total cost.

    Jonker-Volgenant style augmentation with potentials; ties in the
    shortest-path step resolve to the lowest column index, and rows are
    inserted in ascending order, so the result is deterministic.
    """
    n = cost.shape[0]
    INF = np.inf
    u = np.zeros(n)
    v = np.zeros(n + 1)
    col_row = np.full(n + 1, -1, dtype=np.int64)  # column -> assigned row
    way = np.full(n + 1, n, dtype=np.int64)
    minv = np.empty(n)
    used = np.empty(n + 1, dtype=np.bool_)
    for i in range(n):
        col_row[n] = i
        j0 = n
        for j in range(n):
            minv[j] = INF
            used[j] = False
        used[n] = False
        while True:
            used[j0] = True
            i0 = col_row[j0]
            delta = INF
            j1 = -1
            for j in range(n):
                if not used[j]:
                    cur = cost[i0, j] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[col_row[j]] += delta
                    v[j] -= delta
                elif j < n:
                    minv[j] -= delta
            j0 = j1
            if col_row[j0] == -1:
                break
        # Augment along the alternating path back to the virtual column.
        while j0 != n:
            j1 = way[j0]
            col_row[j0] = col_row[j1]
            j0 = j1
    row_col = np.empty(n, dtype=np.int64)
    for j in range(n):
        row_col[col_row[j]] = j
    return row_col


def _want_numba() -> bool:
    return os.environ.get("TRAINSTAB_NUMBA", "1") != "0"


USING_NUMBA = False
if _want_numba():
    try:
        from numba import njit

        _lap_min = njit(cache=True)(_lap_min_kernel)
        USING_NUMBA = True
    except ImportError:
        _lap_min = _lap_min_kernel
else:
    _lap_min = _lap_min_kernel


def lap_solve(cost: np.ndarray, sense: str = "min") -> np.ndarray:
    """Exact optimal assignment: returns column index per row.

    sense "max" maximizes the total instead.  Non-square or non-finite cost
    matrices are rejected.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError("cost matrix must be square")
    if cost.size == 0:
        return np.empty(0, dtype=np.int64)
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    if sense == "max":
        cost = -cost
    elif sense != "min":
        raise ValueError(f"sense must be 'min' or 'max', got {sense!r}")
    return _lap_min(cost)
