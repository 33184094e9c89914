"""Optimal bipartite assignment of ground-truth instances to queries."""

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..errors import ContractError


def hungarian_match(cost):
    """Assign each of the G columns to a distinct row of an N x G cost matrix.

    Returns an int array ``a`` of length G with ``a[g]`` the query matched to
    ground truth ``g``; the total ``cost[a, arange(G)].sum()`` is minimal.
    """
    cost = np.asarray(cost.data if hasattr(cost, "data") else cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ContractError(f"cost must be N x G, got shape {cost.shape}")
    n, g = cost.shape
    if g > n:
        raise ContractError(f"cannot match {g} instances to {n} queries")
    if not np.isfinite(cost).all():
        raise ContractError("cost matrix must be finite")
    if g == 0:
        return np.zeros(0, dtype=np.int64)
    rows, cols = linear_sum_assignment(cost)
    assignment = np.empty(g, dtype=np.int64)
    assignment[cols] = rows
    return assignment


def assignment_cost(cost, assignment):
    cost = np.asarray(cost)
    return float(cost[assignment, np.arange(len(assignment))].sum())
