"""Problem definition and the shared numerical vocabulary.

A doubly-bounded transport problem asks for a nonnegative plan ``P`` whose
rows sum to ``a`` and whose column sums lie between ``lower`` and ``upper``.
Histograms are plain 1-D float arrays and plans are 2-D float arrays; they
are not required to be probability vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import kl_div, xlogy

# exp(x) overflows float64 a little above 709
EXP_LIMIT = 700.0
MAX_GRID_POINTS = 4096


class DBOTError(Exception):
    """Base class for errors raised by this package."""


class InfeasibleProblemError(DBOTError, ValueError):
    """The constraint set of a transport problem is empty or malformed."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class KernelOverflowError(DBOTError, OverflowError):
    pass


class DegenerateKernelError(DBOTError, ArithmeticError):
    """A row or column carrying required mass has zero kernel support."""


def _as_vector(x, name):
    arr = np.array(x, dtype=float).reshape(-1)
    if arr.size == 0:
        raise ValueError(f"{name}: empty histogram")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TransportProblem:
    """Cost matrix, source histogram, column bounds and regularization.

    ``upper`` may contain ``inf`` for unbounded columns.  Arrays are copied
    and frozen on construction.
    """

    cost: np.ndarray
    source: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    epsilon: float = 1.0

    def __post_init__(self):
        cost = np.array(self.cost, dtype=float)
        if cost.ndim != 2:
            raise ValueError(f"cost: expected a 2-D matrix, got {cost.ndim}-D")
        cost.setflags(write=False)
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "source", _as_vector(self.source, "source"))
        object.__setattr__(self, "lower", _as_vector(self.lower, "lower"))
        object.__setattr__(self, "upper", _as_vector(self.upper, "upper"))
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def shape(self):
        return self.cost.shape

    @classmethod
    def balanced(cls, cost, a, b, epsilon=1.0):
        """Problem whose column sums are pinned to ``b`` (lower = upper)."""
        return cls(cost, a, b, b, epsilon)


@dataclass
class FeasibilityReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def validate_problem(p: TransportProblem) -> FeasibilityReport:
    """List every reason the problem cannot be solved; empty means solvable.

    The constraint set is nonempty iff ``lower <= upper`` elementwise and
    ``sum(lower) <= sum(a) <= sum(upper)``: the kernel has full support, so
    any column masses in the box with the right total are reachable.
    """
    out = []
    m, n = p.cost.shape
    a, lo, up = p.source, p.lower, p.upper
    if a.shape != (m,):
        out.append(f"source: length {a.size} does not match {m} cost rows")
    if lo.shape != (n,):
        out.append(f"bounds: lower has length {lo.size}, expected {n}")
    if up.shape != (n,):
        out.append(f"bounds: upper has length {up.size}, expected {n}")
    if not np.all(np.isfinite(p.cost)):
        out.append("cost: non-finite entry")
    if not (np.isfinite(p.epsilon) and p.epsilon > 0):
        out.append(f"epsilon: must be positive, got {p.epsilon}")
    if out:
        return FeasibilityReport(out)

    if not np.all(np.isfinite(a)):
        out.append("source: non-finite entry")
    elif np.any(a < 0):
        out.append(f"source: negative entry at index {int(np.argmax(a < 0))}")
    elif a.sum() <= 0:
        out.append("source: no positive mass")
    if np.any(np.isnan(lo)) or np.any(np.isinf(lo)):
        out.append("bounds: lower must be finite")
    elif np.any(lo < 0):
        out.append(f"bounds: negative lower bound at index {int(np.argmax(lo < 0))}")
    if np.any(np.isnan(up)):
        out.append("bounds: upper contains NaN")
    elif np.any(up < 0):
        out.append(f"bounds: negative upper bound at index {int(np.argmax(up < 0))}")
    if out:
        return FeasibilityReport(out)

    bad = np.flatnonzero(lo > up)
    if bad.size:
        out.append(f"bounds: lower exceeds upper at index {int(bad[0])}")
    total = a.sum()
    # relative slack so that exactly balanced problems survive rounding
    slack = 1e-12 * max(1.0, total)
    if lo.sum() > total + slack:
        out.append(f"Σ b^d > Σ a ({lo.sum():.17g} > {total:.17g})")
    if up.sum() < total - slack:
        out.append(f"Σ a > Σ b^u ({total:.17g} > {up.sum():.17g})")
    return FeasibilityReport(out)


def log_kernel(cost, epsilon):
    return -np.asarray(cost, dtype=float) / epsilon


def build_kernel(cost, epsilon: float) -> np.ndarray:
    """Gibbs kernel ``exp(-C / epsilon)``.

    Raises KernelOverflowError when an exponent exceeds ``EXP_LIMIT``; the
    log-domain solvers never form the kernel and handle such costs.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    logk = log_kernel(cost, epsilon)
    if logk.size and logk.max() > EXP_LIMIT:
        raise KernelOverflowError(
            f"exp(-C/eps) overflows (max exponent {logk.max():.1f}); use log-domain solver"
        )
    return np.exp(logk)


def kernel_underflows(cost, epsilon) -> bool:
    logk = log_kernel(cost, epsilon)
    return bool(logk.size) and (logk.min() < -EXP_LIMIT or logk.max() > EXP_LIMIT)


def marginals(P):
    """Row sums and column sums of a plan."""
    P = np.asarray(P, dtype=float)
    return P.sum(axis=1), P.sum(axis=0)


def transport_cost(P, cost) -> float:
    P = np.asarray(P, dtype=float)
    cost = np.asarray(cost, dtype=float)
    if P.shape != cost.shape:
        raise ValueError(f"shape mismatch: plan {P.shape} vs cost {cost.shape}")
    return float(np.sum(P * cost))


def entropy(P) -> float:
    """``-sum P (log P - 1)`` with ``0 log 0 = 0``."""
    P = np.asarray(P, dtype=float)
    return float(-np.sum(xlogy(P, P) - P))


def kl_general(P, K) -> float:
    """Generalized KL divergence ``sum P log(P/K) - P + K``."""
    P = np.asarray(P, dtype=float)
    K = np.asarray(K, dtype=float)
    if P.shape != K.shape:
        raise ValueError(f"shape mismatch: {P.shape} vs {K.shape}")
    return float(np.sum(kl_div(P, K)))


def entropic_objective(P, cost, epsilon) -> float:
    """``<C, P> - epsilon * H(P)``, the quantity every solver minimizes."""
    return transport_cost(P, cost) - epsilon * entropy(P)


def row_residual(P, a) -> float:
    return float(np.max(np.abs(np.asarray(P).sum(axis=1) - a)))


def column_violation(P, lower, upper) -> float:
    """Largest amount by which a column sum leaves ``[lower, upper]``."""
    cols = np.asarray(P).sum(axis=0)
    below = np.max(lower - cols, initial=0.0)
    with np.errstate(invalid="ignore"):
        above = np.max(np.where(np.isinf(upper), 0.0, cols - upper), initial=0.0)
    return float(max(below, above, 0.0))


def grid_cost_matrix(height: int, width: int, exponent: float = 2.0) -> np.ndarray:
    """Pairwise ``|x - y| ** exponent`` between the pixels of an H x W grid.

    Pixels are indexed in row-major order with unit spacing.
    """
    if height < 1 or width < 1:
        raise ValueError("grid dimensions must be >= 1")
    if exponent <= 0:
        raise ValueError("exponent must be positive")
    if height * width > MAX_GRID_POINTS:
        raise ValueError(
            f"grid of {height * width} pixels exceeds the {MAX_GRID_POINTS}-pixel limit"
        )
    rr, cc = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    coords = np.column_stack([rr.ravel(), cc.ravel()]).astype(float)
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    return dist**exponent
