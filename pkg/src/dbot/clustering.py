"""Size-bounded barycenter clustering.

Each outer iteration fixes the centroids, solves a doubly-bounded transport
problem from samples (unit mass each) to centroids, and then moves every
centroid to the barycenter of the samples whose largest coupling entry
points at it.  Cluster masses are therefore held between ``lower`` and
``upper``; the one-hot reweighting keeps soft cross-cluster mass from
dragging centroids toward each other.

Samples are either points (``ndarray`` of shape ``(S, d)``, squared
Euclidean distance) or histograms on a shared support
(:class:`HistogramDataset`, entropic Wasserstein distance).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .core import InfeasibleProblemError, TransportProblem
from .solvers import SolverConfig, solve_sinkhorn_knopp

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HistogramDataset:
    support_cost: np.ndarray
    histograms: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.support_cost, dtype=float)
        H = np.atleast_2d(np.asarray(self.histograms, dtype=float))
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("support_cost must be square")
        if H.shape[1] != M.shape[0]:
            raise ValueError(f"histograms have {H.shape[1]} bins, support has {M.shape[0]}")
        if np.any(H < 0):
            raise ValueError("histograms must be nonnegative")
        sums = H.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            raise ValueError("each histogram must sum to 1")
        if not np.allclose(M, M.T) or np.any(np.diag(M) != 0):
            raise ValueError("support_cost must be symmetric with zero diagonal")
        object.__setattr__(self, "support_cost", M)
        object.__setattr__(self, "histograms", H)

    def __len__(self):
        return len(self.histograms)


@dataclass(frozen=True)
class ClusterBounds:
    """Per-cluster mass limits in sample units (each sample carries mass 1)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        up = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != up.shape:
            raise ValueError("lower and upper bounds differ in length")
        if np.any(lo < 0) or np.any(lo > up):
            raise ValueError("cluster bounds need 0 <= lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @classmethod
    def uniform(cls, k, lower=0.0, upper=np.inf):
        return cls(np.full(k, float(lower)), np.full(k, float(upper)))

    def check(self, n_samples):
        if self.lower.sum() > n_samples or self.upper.sum() < n_samples:
            raise InfeasibleProblemError(
                [f"cluster bounds cannot hold {n_samples} samples "
                 f"(sum lower {self.lower.sum():g}, sum upper {self.upper.sum():g})"]
            )


@dataclass
class ClusterConfig:
    epsilon: float = 0.01
    outer_iters: int = 5
    reweight: bool = True
    seed: int = 0
    until_stable: bool = False
    max_outer_iters: int = 100
    stable_tol: float = 1e-6
    epsilon_bary: float = 0.1
    bary_iters: int = 1000
    solver: SolverConfig | None = None  # None: see assign()


@dataclass
class ClusteringResult:
    centroids: np.ndarray
    assignment: np.ndarray
    reweight: np.ndarray
    hard_labels: np.ndarray
    per_cluster_mass: np.ndarray
    iterations: int
    converged: bool = True

    def to_dict(self, true_labels=None) -> dict:
        out = {
            "centroids": self.centroids.tolist(),
            "hard_labels": self.hard_labels.tolist(),
            "per_cluster_mass": self.per_cluster_mass.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
        }
        if true_labels is not None:
            out["purity"] = purity(self.hard_labels, true_labels)
        return out


# ---------------------------------------------------------------------------
# distances


def squared_euclidean(X, Y):
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    d = np.sum(X**2, 1)[:, None] + np.sum(Y**2, 1)[None, :] - 2 * X @ Y.T
    return np.maximum(d, 0.0)


def sinkhorn_costs(sources, targets, support_cost, epsilon, max_iter=1000, tol=1e-9):
    """Entropic transport cost ``<M, P>`` for every (source, target) pair.

    Runs one batched log-domain Sinkhorn per target histogram.
    """
    sources = np.atleast_2d(sources)
    targets = np.atleast_2d(targets)
    logk = -np.asarray(support_cost, dtype=float) / epsilon
    with np.errstate(divide="ignore"):
        log_src = np.log(sources)
    out = np.empty((len(sources), len(targets)))
    for t, tgt in enumerate(targets):
        with np.errstate(divide="ignore"):
            log_tgt = np.log(tgt)
        g = np.zeros_like(log_src)
        for _ in range(max_iter):
            with np.errstate(invalid="ignore"):
                f = log_src - logsumexp(logk[None] + g[:, None, :], axis=2)
                f = np.where(np.isneginf(log_src), -np.inf, f)
                cols = logsumexp(logk[None] + f[:, :, None], axis=1)
                g_new = np.where(np.isneginf(log_tgt), -np.inf, log_tgt[None] - cols)
            with np.errstate(invalid="ignore"):
                delta = np.where(np.isneginf(g_new) & np.isneginf(g), 0.0, np.abs(g_new - g))
            g = g_new
            # row marginals are exact after the f update; the column error is
            # what the next g update corrects
            if np.nanmax(delta, initial=0.0) < tol:
                break
        with np.errstate(invalid="ignore"):
            P = np.exp(f[:, :, None] + logk[None] + g[:, None, :])
        out[:, t] = np.sum(np.nan_to_num(P) * support_cost, axis=(1, 2))
    return out


def distance_matrix(data, centroids, epsilon_bary=0.1):
    if isinstance(data, HistogramDataset):
        return sinkhorn_costs(data.histograms, centroids, data.support_cost, epsilon_bary)
    return squared_euclidean(data, centroids)


def _samples(data):
    return data.histograms if isinstance(data, HistogramDataset) else np.asarray(data, dtype=float)


# ---------------------------------------------------------------------------
# steps


def init_centroids_kmeanspp(data, k, seed=0, epsilon_bary=0.1):
    """D^2-weighted seeding, using the dataset's own distance."""
    X = _samples(data)
    if X.ndim == 1:
        X = X[:, None]
    S = len(X)
    if k > S:
        raise ValueError(f"cannot seed {k} centroids from {S} samples")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(S))]
    closest = distance_matrix(data, X[chosen], epsilon_bary)[:, 0]
    while len(chosen) < k:
        w = np.maximum(closest, 0.0)
        w[chosen] = 0.0
        if w.sum() > 0:
            idx = int(rng.choice(S, p=w / w.sum()))
        else:
            rest = np.setdiff1d(np.arange(S), chosen)
            idx = int(rng.choice(rest))
        chosen.append(idx)
        closest = np.minimum(closest, distance_matrix(data, X[[idx]], epsilon_bary)[:, 0])
    return X[chosen].copy()


def assign(data, centroids, bounds: ClusterBounds, epsilon, cfg: SolverConfig | None = None,
           epsilon_bary=0.1):
    """Coupling between samples (unit mass each) and centroids under the cluster bounds.

    The default solver tolerance is relative to the total mass ``S``: with
    hundreds of unit-mass rows an absolute 1e-9 sits at the rounding floor.
    """
    D = distance_matrix(data, centroids, epsilon_bary)
    S = D.shape[0]
    bounds.check(S)
    p = TransportProblem(D, np.ones(S), bounds.lower, bounds.upper, epsilon)
    if cfg is None:
        cfg = SolverConfig(variant="sinkhorn_knopp", tolerance=1e-9 * max(1, S), max_iter=5000)
    sol = solve_sinkhorn_knopp(p, cfg)
    return sol.coupling, sol.converged


def reweight_matrix(P):
    """One-hot row argmax of the coupling (ties go to the lowest column)."""
    P = np.asarray(P)
    R = np.zeros_like(P, dtype=float)
    R[np.arange(len(P)), np.argmax(P, axis=1)] = 1.0
    return R


def _cluster_weights(P, R):
    W = np.asarray(P) * R
    empty = W.sum(axis=0) <= 0
    if np.any(empty):
        # a centroid nobody picks falls back to its raw coupling weights
        W[:, empty] = np.asarray(P)[:, empty]
    return W / W.sum(axis=0, keepdims=True)


def update_centroids_euclidean(points, P, R):
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return _cluster_weights(P, R).T @ X


def wasserstein_barycenter(histograms, weights, support_cost, epsilon, max_iter=1000, tol=1e-10):
    """Fixed-support entropic barycenter by iterative Bregman projections.

    One scaling pair per input histogram; every iteration matches each plan's
    first marginal to its histogram and then sets the shared second marginal
    to the weighted geometric mean of the plans' current second marginals.
    """
    H = np.atleast_2d(np.asarray(histograms, dtype=float))
    w = np.asarray(weights, dtype=float)
    keep = w > 0
    H, w = H[keep], w[keep] / w[keep].sum()
    logk = -np.asarray(support_cost, dtype=float) / epsilon
    with np.errstate(divide="ignore"):
        log_h = np.log(H)
    logv = np.zeros_like(H)
    log_bary = None
    for _ in range(max_iter):
        with np.errstate(invalid="ignore"):
            logu = log_h - logsumexp(logk[None] + logv[:, None, :], axis=2)
            logu = np.where(np.isneginf(log_h), -np.inf, logu)
            ktu = logsumexp(logk[None] + logu[:, :, None], axis=1)
        new = w @ ktu
        logv = new[None, :] - ktu
        if log_bary is not None and np.max(np.abs(np.exp(new) - np.exp(log_bary))) < tol:
            log_bary = new
            break
        log_bary = new
    bary = np.exp(log_bary)
    return bary / bary.sum()


def update_centroids_wasserstein(histset: HistogramDataset, P, R, epsilon_bary=0.1, iters=1000):
    W = _cluster_weights(P, R)
    return np.stack([
        wasserstein_barycenter(histset.histograms, W[:, t], histset.support_cost, epsilon_bary, iters)
        for t in range(W.shape[1])
    ])


# ---------------------------------------------------------------------------
# driver


def cluster(data, k, bounds: ClusterBounds, cfg: ClusterConfig | None = None) -> ClusteringResult:
    """Alternate bounded assignment and reweighted barycenter updates.

    Runs ``cfg.outer_iters`` rounds, or with ``until_stable`` until no
    centroid moves more than ``stable_tol`` (capped at ``max_outer_iters``).
    """
    cfg = cfg or ClusterConfig()
    hist = isinstance(data, HistogramDataset)
    if not hist:
        data = np.asarray(data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if not np.all(np.isfinite(data)):
            raise ValueError("points must be finite")
    S = len(data)
    if S == 0:
        raise ValueError("no samples to cluster")
    if len(bounds.lower) != k:
        raise ValueError(f"bounds have {len(bounds.lower)} entries for k={k}")
    bounds.check(S)

    centroids = init_centroids_kmeanspp(data, k, cfg.seed, cfg.epsilon_bary)
    rounds = cfg.max_outer_iters if cfg.until_stable else cfg.outer_iters
    all_converged = True
    it = 0
    for it in range(1, rounds + 1):
        P, ok = assign(data, centroids, bounds, cfg.epsilon, cfg.solver, cfg.epsilon_bary)
        all_converged &= ok
        R = reweight_matrix(P) if cfg.reweight else np.ones_like(P)
        if hist:
            new = update_centroids_wasserstein(data, P, R, cfg.epsilon_bary, cfg.bary_iters)
        else:
            new = update_centroids_euclidean(data, P, R)
        shift = float(np.max(np.abs(new - centroids)))
        centroids = new
        logger.debug("outer iteration %d: centroid shift %.3g", it, shift)
        if cfg.until_stable and shift < cfg.stable_tol:
            break

    return ClusteringResult(
        centroids=centroids,
        assignment=P,
        reweight=reweight_matrix(P),
        hard_labels=np.argmax(P, axis=1),
        per_cluster_mass=P.sum(axis=0),
        iterations=it,
        converged=bool(all_converged),
    )


def purity(hard_labels, true_labels) -> float:
    """Accuracy under the best one-to-one matching of clusters to classes."""
    pred = np.asarray(hard_labels)
    true = np.asarray(true_labels)
    if pred.shape != true.shape:
        raise ValueError("label vectors differ in length")
    if pred.size == 0:
        return 0.0
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(true, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1))
    np.add.at(table, (pi, ti), 1)
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum() / pred.size)
