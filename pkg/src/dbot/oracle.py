"""Brute-force and closed-form references for tiny instances.

Nothing here uses scaling vectors or potentials: the grid search evaluates
the entropic objective directly, the row-only solution is a row softmax and
the partition oracle enumerates labelings.  Agreement with the solvers is
therefore evidence rather than a restatement of the same arithmetic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.special import softmax, xlogy

from .core import InfeasibleProblemError, TransportProblem, validate_problem

# rounding slack when testing grid points against the column bounds
_BOUND_SLACK = 1e-12


@dataclass
class OracleResult:
    best_coupling: np.ndarray
    best_objective: float
    resolution: float


def oracle_grid_2x2(p: TransportProblem, resolution: float = 1e-4, chunk: int = 256) -> OracleResult:
    """Exhaustive grid minimizer of ``<C, P> - eps H(P)`` for 2 x 2 problems.

    With rows pinned to ``a`` the plan is fixed by ``P11`` and ``P21``; both
    are swept over ``k * resolution`` within ``[0, a_i]``.  Grid points whose
    column sums leave the bounds are discarded.  Ties keep the lowest grid
    index (``P11`` major).
    """
    if p.cost.shape != (2, 2):
        raise ValueError(f"oracle_grid_2x2 needs a 2x2 problem, got {p.cost.shape}")
    if resolution > 1e-3:
        raise ValueError("resolution must be <= 1e-3")
    report = validate_problem(p)
    if not report.ok:
        raise InfeasibleProblemError(report.violations)

    a1, a2 = p.source
    C, eps = p.cost, p.epsilon
    lo, up = p.lower, p.upper
    x = np.arange(int(np.floor(a1 / resolution + 1e-9)) + 1) * resolution
    y = np.arange(int(np.floor(a2 / resolution + 1e-9)) + 1) * resolution
    x = np.minimum(x, a1)
    y = np.minimum(y, a2)

    def negent(t):
        return xlogy(t, t) - t

    # row 2 terms depend only on y; precompute once
    row2 = C[1, 0] * y + C[1, 1] * (a2 - y) + eps * (negent(y) + negent(a2 - y))

    best = (np.inf, None, None)
    for start in range(0, len(x), chunk):
        xs = x[start:start + chunk]
        row1 = C[0, 0] * xs + C[0, 1] * (a1 - xs) + eps * (negent(xs) + negent(a1 - xs))
        obj = row1[:, None] + row2[None, :]
        col1 = xs[:, None] + y[None, :]
        col2 = (a1 + a2) - col1
        ok = (
            (col1 >= lo[0] - _BOUND_SLACK)
            & (col1 <= up[0] + _BOUND_SLACK)
            & (col2 >= lo[1] - _BOUND_SLACK)
            & (col2 <= up[1] + _BOUND_SLACK)
        )
        if not ok.any():
            continue
        obj = np.where(ok, obj, np.inf)
        k = int(np.argmin(obj))
        i, j = divmod(k, obj.shape[1])
        if obj[i, j] < best[0]:
            best = (float(obj[i, j]), xs[i], y[j])

    if best[1] is None:
        raise InfeasibleProblemError(["grid: no grid point satisfies the column bounds"])
    val, p11, p21 = best
    P = np.array([[p11, a1 - p11], [p21, a2 - p21]])
    return OracleResult(P, val, resolution)


def closed_form_row_only(cost, a, epsilon) -> np.ndarray:
    """Optimal plan when only the rows are constrained: ``a_i`` times a row softmax."""
    a = np.asarray(a, dtype=float)
    return a[:, None] * softmax(-np.asarray(cost, dtype=float) / epsilon, axis=1)


def oracle_feasible(source, lower, upper) -> bool:
    """Whether some nonnegative plan has rows ``source`` and columns in the bounds.

    Decided by a linear-programming feasibility solve, independent of the
    closed-form test used by the validator.
    """
    a = np.asarray(source, dtype=float)
    lo = np.asarray(lower, dtype=float)
    up = np.asarray(upper, dtype=float)
    m, n = len(a), len(lo)
    # variables are P flattened row-major
    A_eq = np.kron(np.eye(m), np.ones((1, n)))
    cols = np.kron(np.ones((1, m)), np.eye(n))
    finite = np.isfinite(up)
    A_ub = np.vstack([-cols, cols[finite]])
    b_ub = np.concatenate([-lo, up[finite]])
    res = linprog(np.zeros(m * n), A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=a,
                  bounds=(0, None), method="highs")
    return res.status == 0


def _sse(points, labels, k):
    total = 0.0
    for t in range(k):
        members = points[labels == t]
        if len(members):
            total += float(np.sum((members - members.mean(axis=0)) ** 2))
    return total


def oracle_partition_clustering(points, k, bounds=(0, None)):
    """Exhaustive size-bounded clustering of at most 10 points into k <= 3 groups.

    ``bounds`` is ``(min_size, max_size)``; either end may also be a length-k
    sequence.  Returns ``(labels, cost)`` where cost is the within-cluster sum
    of squared distances to each cluster mean.  The first labeling in
    lexicographic order wins ties.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    S = len(pts)
    if S > 10 or k > 3:
        raise ValueError("oracle_partition_clustering handles at most 10 points and k <= 3")
    if k < 1:
        raise ValueError("k must be >= 1")
    lo, hi = bounds
    lo = np.broadcast_to(np.asarray(0 if lo is None else lo), (k,))
    hi = np.broadcast_to(np.asarray(S if hi is None else hi), (k,))

    best_cost, best_labels = np.inf, None
    for labels in itertools.product(range(k), repeat=S):
        labels = np.asarray(labels)
        sizes = np.bincount(labels, minlength=k)
        if np.any(sizes < lo) or np.any(sizes > hi):
            continue
        cost = _sse(pts, labels, k)
        if cost < best_cost - 1e-12:
            best_cost, best_labels = cost, labels
    if best_labels is None:
        raise InfeasibleProblemError(["partition: no labeling satisfies the size bounds"])
    return best_labels, best_cost
