"""Minimum-cost bipartite assignment with forbidden pairs.

Thin wrapper around scipy's Jonker-Volgenant solver; forbidden pairs are
encoded with a sentinel cost and stripped from the result.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

FORBIDDEN = float("inf")


def hungarian_assign(cost: np.ndarray) -> list[tuple[int, int]]:
    """Optimal assignment minimizing total cost.

    ``cost`` is an (n, m) matrix; entries equal to ``FORBIDDEN`` (or any
    non-finite value) mark disallowed pairs. Returns (row, col) pairs sorted
    by row; forbidden pairs never appear in the result, so fewer than
    min(n, m) pairs may be returned.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return []
    finite = np.isfinite(cost)
    if not finite.any():
        return []
    # replace the sentinel with a cost high enough that the solver first
    # minimizes the number of forbidden picks, then the finite cost
    worst = np.abs(cost[finite]).max()
    big = 2.0 * (worst + 1.0) * (min(cost.shape) + 1)
    safe = np.where(finite, cost, big)
    rows, cols = linear_sum_assignment(safe)
    return sorted(
        (int(r), int(c)) for r, c in zip(rows, cols) if finite[r, c]
    )


def assignment_cost(cost: np.ndarray, pairs: list[tuple[int, int]]) -> float:
    cost = np.asarray(cost, dtype=np.float64)
    return float(sum(cost[r, c] for r, c in pairs))
