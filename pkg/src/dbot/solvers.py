"""Scaling algorithms for entropic doubly-bounded optimal transport.

Three routes reach the same plan ``P = diag(u) K diag(q * v)``:

* ``solve_bregman``: alternating KL projections of the plan onto the row
  constraint, the lower column bound and the upper column bound.
* ``solve_sinkhorn_knopp``: three-vector scaling updates of ``(u, q, v)``.
* ``solve_dual``: block-coordinate ascent on the potentials
  ``(f, g, h) = epsilon * log(u, q, v)``.

``q >= 1`` carries the lower bound and ``v <= 1`` the upper bound.  The
classic two-marginal Sinkhorn is included as the ``lower == upper`` baseline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .core import (
    DegenerateKernelError,
    InfeasibleProblemError,
    TransportProblem,
    build_kernel,
    column_violation,
    entropic_objective,
    kernel_underflows,
    log_kernel,
    row_residual,
    validate_problem,
)

logger = logging.getLogger(__name__)

VARIANTS = ("bregman", "sinkhorn_knopp", "dual", "vanilla")
# below this epsilon the auto mode switches to potentials
LOG_DOMAIN_EPSILON = 1e-2


@dataclass
class SolverConfig:
    variant: str = "sinkhorn_knopp"
    max_iter: int = 1000
    tolerance: float = 1e-9
    log_domain: bool | None = None  # None: decide from epsilon and the kernel range
    check_every: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.check_every < 1:
            raise ValueError("check_every must be >= 1")


@dataclass
class ScalingState:
    u: np.ndarray
    q: np.ndarray
    v: np.ndarray


@dataclass
class DualState:
    f: np.ndarray
    g: np.ndarray
    h: np.ndarray


@dataclass
class Solution:
    coupling: np.ndarray
    variant: str
    iterations: int
    converged: bool
    row_residual: float
    col_violation: float
    objective: float
    scaling: ScalingState | None = None
    dual: DualState | None = None

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "row_residual": float(self.row_residual),
            "col_violation": float(self.col_violation),
            "objective": float(self.objective),
            "coupling": self.coupling.tolist(),
        }


@dataclass
class ComparisonReport:
    iterations: int
    f_gap: float
    g_gap: float
    h_gap: float
    coupling_divergence: float
    gap_history: list = field(default_factory=list)

    @property
    def max_gap(self) -> float:
        return max(self.f_gap, self.g_gap, self.h_gap)


# ---------------------------------------------------------------------------
# single projections


def kl_project_rows(P, a):
    """KL projection onto ``{P : P 1 = a}``: rescale each row to its target."""
    P = np.asarray(P, dtype=float)
    a = np.asarray(a, dtype=float)
    rows = P.sum(axis=1)
    if np.any((rows <= 0) & (a > 0)):
        raise DegenerateKernelError("zero row sum where the source has mass")
    scale = np.divide(a, rows, out=np.zeros_like(rows), where=rows > 0)
    return P * scale[:, None]


def _lower_factor(bd, cols):
    if np.any((cols <= 0) & (bd > 0)):
        raise DegenerateKernelError("zero column sum under a positive lower bound")
    ratio = np.divide(bd, cols, out=np.zeros_like(cols), where=cols > 0)
    return np.maximum(ratio, 1.0)


def _upper_factor(bu, cols):
    # an empty column under a zero cap stays pinned at zero
    empty = np.where(bu > 0, np.inf, 0.0)
    with np.errstate(invalid="ignore"):
        ratio = np.divide(bu, cols, out=empty, where=cols > 0)
    return np.minimum(ratio, 1.0)


def kl_project_lower(P, b_d):
    """KL projection onto ``{P : P^T 1 >= b_d}``; deficient columns are raised."""
    P = np.asarray(P, dtype=float)
    return P * _lower_factor(np.asarray(b_d, dtype=float), P.sum(axis=0))


def kl_project_upper(P, b_u):
    """KL projection onto ``{P : P^T 1 <= b_u}``; excess columns are lowered."""
    P = np.asarray(P, dtype=float)
    return P * _upper_factor(np.asarray(b_u, dtype=float), P.sum(axis=0))


# ---------------------------------------------------------------------------
# helpers


def _check(p: TransportProblem):
    report = validate_problem(p)
    if not report.ok:
        raise InfeasibleProblemError(report.violations)


def use_log_domain(p: TransportProblem, cfg: SolverConfig) -> bool:
    if cfg.log_domain is not None:
        return bool(cfg.log_domain)
    return p.epsilon < LOG_DOMAIN_EPSILON or kernel_underflows(p.cost, p.epsilon)


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def _finish(p, P, variant, it, scaling=None, dual=None, tol=None, change=np.inf):
    rres = row_residual(P, p.source)
    cviol = column_violation(P, p.lower, p.upper)
    converged = change < tol and rres <= tol and cviol <= tol
    if not converged:
        logger.warning(
            "%s did not converge in %d iterations (change %.3g, row %.3g, col %.3g)",
            variant, it, change, rres, cviol,
        )
    return Solution(
        coupling=P,
        variant=variant,
        iterations=it,
        converged=converged,
        row_residual=rres,
        col_violation=cviol,
        objective=entropic_objective(P, p.cost, p.epsilon),
        scaling=scaling,
        dual=dual,
    )


class _Stopper:
    """Tracks the max-abs change of the plan between checks."""

    def __init__(self, p, cfg):
        self.p, self.cfg = p, cfg
        self.prev = None
        self.change = np.inf

    def due(self, it):
        return it % self.cfg.check_every == 0 or it == self.cfg.max_iter

    def done(self, P):
        if self.prev is not None:
            self.change = float(np.max(np.abs(P - self.prev)))
        self.prev = P
        tol = self.cfg.tolerance
        return (
            self.change < tol
            and row_residual(P, self.p.source) <= tol
            and column_violation(P, self.p.lower, self.p.upper) <= tol
        )


def _safe_div(x, y):
    return np.divide(x, y, out=np.zeros_like(x), where=y > 0)


def _log_lower(log_bd, t, log_v):
    """``max(log b_d - t - log v, 0)``; zero lower bounds give 0."""
    with np.errstate(invalid="ignore"):
        val = log_bd - t - log_v
    return np.where(np.isneginf(log_bd), 0.0, np.maximum(np.nan_to_num(val, nan=0.0), 0.0))


def _log_upper(log_bu, t, log_q):
    """``min(log b_u - t - log q, 0)``; infinite caps give 0, zero caps -inf."""
    with np.errstate(invalid="ignore"):
        val = log_bu - t - log_q
    val = np.where(np.isposinf(log_bu), 0.0, val)
    val = np.where(np.isneginf(log_bu), -np.inf, val)
    return np.minimum(val, 0.0)


def _row_lse(logk, col):
    return logsumexp(logk + col[None, :], axis=1)


def _col_lse(logk, row):
    with np.errstate(invalid="ignore"):
        return logsumexp(logk + row[:, None], axis=0)


def _exp_plan(logk, row, col):
    with np.errstate(invalid="ignore"):
        return np.exp(logk + row[:, None] + col[None, :])


# ---------------------------------------------------------------------------
# variant I: KL projections


def solve_bregman(p: TransportProblem, cfg: SolverConfig | None = None, *, correction=True):
    """Cyclic KL projections rows -> lower bound -> upper bound from ``P = K``.

    Parameters
    ----------
    p : TransportProblem
    cfg : SolverConfig, optional
        One iteration is one full cycle of the three projections.
    correction : bool
        Keep Dykstra correction factors for the two inequality blocks (the row
        block is affine and needs none).  Without them a column raised once
        keeps that factor after its bound stops binding, and the iteration can
        settle on a feasible but non-optimal plan.

    Returns
    -------
    Solution
        ``scaling`` holds the accumulated row factors ``u`` and the lower and
        upper column factors ``q >= 1``, ``v <= 1``.
    """
    cfg = cfg or SolverConfig(variant="bregman")
    _check(p)
    if use_log_domain(p, cfg):
        return _bregman_log(p, cfg, correction)
    a, bd, bu = p.source, p.lower, p.upper
    P = build_kernel(p.cost, p.epsilon)
    m, n = P.shape
    u, q, v = np.ones(m), np.ones(n), np.ones(n)
    stop = _Stopper(p, cfg)
    it = 0
    for it in range(1, cfg.max_iter + 1):
        rows = P.sum(axis=1)
        if np.any((rows <= 0) & (a > 0)):
            raise DegenerateKernelError("zero row sum where the source has mass")
        r = _safe_div(a, rows)
        P *= r[:, None]
        u *= r
        if correction:
            P /= q
            q = _lower_factor(bd, P.sum(axis=0))
            P *= q
            P /= np.where(v > 0, v, 1.0)
            v = _upper_factor(bu, P.sum(axis=0))
            P *= v
        else:
            fac = _lower_factor(bd, P.sum(axis=0))
            P *= fac
            q = q * fac
            fac = _upper_factor(bu, P.sum(axis=0))
            P *= fac
            v = v * fac
        if stop.due(it) and stop.done(P.copy()):
            break
    return _finish(p, P, "bregman", it, ScalingState(u, q, v), tol=cfg.tolerance, change=stop.change)


def _bregman_log(p, cfg, correction):
    eps = p.epsilon
    log_a, log_bd, log_bu = _log(p.source), _log(p.lower), _log(p.upper)
    logP = log_kernel(p.cost, eps)
    m, n = logP.shape
    logu, logq, logv = np.zeros(m), np.zeros(n), np.zeros(n)
    stop = _Stopper(p, cfg)
    it = 0
    for it in range(1, cfg.max_iter + 1):
        rows = logsumexp(logP, axis=1)
        with np.errstate(invalid="ignore"):
            r = np.where(np.isneginf(log_a), -np.inf, log_a - rows)
        if np.any(np.isneginf(rows) & ~np.isneginf(log_a)):
            raise DegenerateKernelError("zero row sum where the source has mass")
        logP = logP + r[:, None]
        logu = logu + r
        if correction:
            logP = logP - np.where(np.isfinite(logq), logq, 0.0)
            logq = _log_lower(log_bd, logsumexp(logP, axis=0), 0.0)
            logP = logP + logq
            logP = logP - np.where(np.isfinite(logv), logv, 0.0)
            logv = _log_upper(log_bu, logsumexp(logP, axis=0), 0.0)
            logP = logP + logv
        else:
            fac = _log_lower(log_bd, logsumexp(logP, axis=0), 0.0)
            logP, logq = logP + fac, logq + fac
            fac = _log_upper(log_bu, logsumexp(logP, axis=0), 0.0)
            logP, logv = logP + fac, logv + fac
        if stop.due(it) and stop.done(np.exp(logP)):
            break
    scaling = ScalingState(*_exp_all(logu, logq, logv))
    dual = DualState(eps * logu, eps * logq, eps * logv)
    return _finish(p, np.exp(logP), "bregman", it, scaling, dual, cfg.tolerance, stop.change)


def _exp_all(*xs):
    with np.errstate(over="ignore"):
        return [np.exp(x) for x in xs]


# ---------------------------------------------------------------------------
# variant II: three-vector scaling


def solve_sinkhorn_knopp(p: TransportProblem, cfg: SolverConfig | None = None) -> Solution:
    """Scaling iterations for ``P = diag(u) K diag(q * v)``.

    Starting from ``q = v = 1``, each iteration updates::

        u = a / K (q * v)
        q = max(b_d / ((K^T u) * v), 1)
        v = min(b_u / ((K^T u) * q), 1)

    so ``q >= 1`` and ``v <= 1`` hold at every step.
    """
    cfg = cfg or SolverConfig(variant="sinkhorn_knopp")
    _check(p)
    if use_log_domain(p, cfg):
        sol = _potential_ascent(p, cfg)
        sol.variant = "sinkhorn_knopp"
        sol.scaling = ScalingState(*_exp_all(*(x / p.epsilon for x in vars(sol.dual).values())))
        return sol
    a, bd, bu = p.source, p.lower, p.upper
    K = build_kernel(p.cost, p.epsilon)
    m, n = K.shape
    q, v = np.ones(n), np.ones(n)
    u = np.ones(m)
    stop = _Stopper(p, cfg)
    it = 0
    for it in range(1, cfg.max_iter + 1):
        u, q, v = _sk_step(K, a, bd, bu, q, v)
        if stop.due(it) and stop.done(u[:, None] * K * (q * v)):
            break
    P = u[:, None] * K * (q * v)
    return _finish(p, P, "sinkhorn_knopp", it, ScalingState(u, q, v), tol=cfg.tolerance, change=stop.change)


def _sk_step(K, a, bd, bu, q, v):
    denom = K @ (q * v)
    if np.any((denom <= 0) & (a > 0)):
        raise DegenerateKernelError("zero row sum where the source has mass")
    u = _safe_div(a, denom)
    ktu = K.T @ u
    q = _lower_factor(bd, ktu * v)
    v = _upper_factor(bu, ktu * q)
    return u, q, v


# ---------------------------------------------------------------------------
# variant III: dual block-coordinate ascent


def solve_dual(p: TransportProblem, cfg: SolverConfig | None = None) -> Solution:
    """Block-coordinate ascent on the dual potentials, always in log space.

    Maximizes ``<f, a> + <g, b_d> + <h, b_u> - eps * <e^{f/eps}, K e^{(g+h)/eps}>``
    over ``f`` free, ``g >= 0`` and ``h <= 0``, starting from ``g = h = 0``.
    Columns with ``b_d = 0`` keep ``g = 0`` and unbounded columns keep ``h = 0``.
    """
    cfg = cfg or SolverConfig(variant="dual")
    _check(p)
    return _potential_ascent(p, cfg)


def _dual_step(logk, eps, log_a, log_bd, log_bu, g, h):
    with np.errstate(invalid="ignore"):
        f = eps * np.where(np.isneginf(log_a), -np.inf, log_a - _row_lse(logk, (g + h) / eps))
    t = eps * _col_lse(logk, f / eps)
    g = eps * _log_lower(log_bd, t / eps, h / eps)
    h = eps * _log_upper(log_bu, t / eps, g / eps)
    return f, g, h


def _potential_ascent(p, cfg):
    eps = p.epsilon
    logk = log_kernel(p.cost, eps)
    log_a, log_bd, log_bu = _log(p.source), _log(p.lower), _log(p.upper)
    m, n = logk.shape
    f, g, h = np.zeros(m), np.zeros(n), np.zeros(n)
    stop = _Stopper(p, cfg)
    it = 0
    for it in range(1, cfg.max_iter + 1):
        f, g, h = _dual_step(logk, eps, log_a, log_bd, log_bu, g, h)
        if np.any(np.isneginf(f) & ~np.isneginf(log_a)):
            raise DegenerateKernelError("zero row sum where the source has mass")
        if stop.due(it) and stop.done(_exp_plan(logk, f / eps, (g + h) / eps)):
            break
    P = _exp_plan(logk, f / eps, (g + h) / eps)
    return _finish(p, P, "dual", it, dual=DualState(f, g, h), tol=cfg.tolerance, change=stop.change)


def dual_objective(p: TransportProblem, f, g, h) -> float:
    """Dual value; equals the primal objective at the optimum."""
    eps = p.epsilon
    logk = log_kernel(p.cost, eps)
    mass = float(np.sum(_exp_plan(logk, f / eps, (g + h) / eps)))
    terms = [
        np.sum(np.where(p.source > 0, f * p.source, 0.0)),
        np.sum(np.where(g != 0, g * p.lower, 0.0)),
        np.sum(np.where(h != 0, h * p.upper, 0.0)),
    ]
    return float(sum(terms) - eps * mass)


# ---------------------------------------------------------------------------
# baseline and dispatch


def solve_vanilla_sinkhorn(cost, a, b, epsilon, cfg: SolverConfig | None = None) -> Solution:
    """Classic Sinkhorn for ``P 1 = a``, ``P^T 1 = b``."""
    cfg = cfg or SolverConfig(variant="vanilla")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if abs(a.sum() - b.sum()) > 1e-9 * max(1.0, abs(a.sum())):
        raise InfeasibleProblemError([f"mass mismatch: sum(a)={a.sum():.17g}, sum(b)={b.sum():.17g}"])
    p = TransportProblem.balanced(cost, a, b, epsilon)
    _check(p)
    stop = _Stopper(p, cfg)
    it = 0
    if use_log_domain(p, cfg):
        logk = log_kernel(p.cost, epsilon)
        log_a, log_b = _log(a), _log(b)
        f, g = np.zeros(len(a)), np.zeros(len(b))
        for it in range(1, cfg.max_iter + 1):
            with np.errstate(invalid="ignore"):
                f = np.where(np.isneginf(log_a), -np.inf, log_a - _row_lse(logk, g))
                g = np.where(np.isneginf(log_b), -np.inf, log_b - _col_lse(logk, f))
            if stop.due(it) and stop.done(_exp_plan(logk, f, g)):
                break
        P = _exp_plan(logk, f, g)
        zero = np.zeros(len(b))
        return _finish(p, P, "vanilla", it, dual=DualState(epsilon * f, epsilon * g, zero),
                       tol=cfg.tolerance, change=stop.change)
    K = build_kernel(p.cost, epsilon)
    v = np.ones(len(b))
    u = np.ones(len(a))
    for it in range(1, cfg.max_iter + 1):
        u = _safe_div(a, K @ v)
        v = _safe_div(b, K.T @ u)
        if stop.due(it) and stop.done(u[:, None] * K * v):
            break
    P = u[:, None] * K * v
    return _finish(p, P, "vanilla", it, ScalingState(u, v, np.ones(len(b))),
                   tol=cfg.tolerance, change=stop.change)


def solve(p: TransportProblem, cfg: SolverConfig | None = None) -> Solution:
    """Run the variant named by ``cfg.variant``."""
    cfg = cfg or SolverConfig()
    if cfg.variant == "bregman":
        return solve_bregman(p, cfg)
    if cfg.variant == "sinkhorn_knopp":
        return solve_sinkhorn_knopp(p, cfg)
    if cfg.variant == "dual":
        return solve_dual(p, cfg)
    if not np.array_equal(p.lower, p.upper):
        raise InfeasibleProblemError(["vanilla: requires lower == upper"])
    return solve_vanilla_sinkhorn(p.cost, p.source, p.lower, p.epsilon, cfg)


def lockstep_compare(p: TransportProblem, iters: int = 50) -> ComparisonReport:
    """Run scaling and dual iterations side by side from matching starts.

    The dual potentials should equal ``epsilon * log`` of the scaling
    vectors after every iteration.  Gaps are max-abs over entries and over
    iterations; matching infinities count as zero gap.
    """
    _check(p)
    eps = p.epsilon
    a, bd, bu = p.source, p.lower, p.upper
    K = build_kernel(p.cost, eps)
    logk = log_kernel(p.cost, eps)
    log_a, log_bd, log_bu = _log(a), _log(bd), _log(bu)
    n = K.shape[1]
    q, v = np.ones(n), np.ones(n)
    g, h = np.zeros(n), np.zeros(n)
    history = []
    for _ in range(iters):
        u, q, v = _sk_step(K, a, bd, bu, q, v)
        f, g, h = _dual_step(logk, eps, log_a, log_bd, log_bu, g, h)
        history.append(tuple(_gap(x, eps * _log(s)) for x, s in ((f, u), (g, q), (h, v))))
    P_sk = u[:, None] * K * (q * v)
    P_dual = _exp_plan(logk, f / eps, (g + h) / eps)
    gaps = np.max(np.array(history), axis=0) if history else np.zeros(3)
    return ComparisonReport(
        iterations=iters,
        f_gap=float(gaps[0]),
        g_gap=float(gaps[1]),
        h_gap=float(gaps[2]),
        coupling_divergence=float(np.max(np.abs(P_sk - P_dual))),
        gap_history=history,
    )


def _gap(x, y):
    same = (x == y)  # covers matching infinities
    with np.errstate(invalid="ignore"):
        d = np.where(same, 0.0, np.abs(x - y))
    return float(np.max(d, initial=0.0))
