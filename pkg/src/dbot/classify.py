"""Doubly-bounded transport for long-tailed classification.

Training view: logits define a cost ``C = c - l`` and the model's plan is a
few scaling iterations under column bounds ``(1 -/+ delta) r`` around a class
prior ``r``.  The loss is the cross-entropy of the plan's row conditionals
against the labels.  With one iteration and ``delta = 0`` this is exactly the
Balanced Softmax loss; with a uniform prior on top it is plain softmax
cross-entropy.

Inference view: solve the bounded transport problem on a test batch and
predict each row's argmax, so predicted class masses follow a target prior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from .core import TransportProblem
from .solvers import SolverConfig, _log, _log_lower, _log_upper, solve_bregman


@dataclass
class LossConfig:
    delta: float = 0.0
    k_iters: int = 1
    epsilon: float = 1.0
    shift_c: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("delta must lie in [0, 1)")
        if self.k_iters < 1:
            raise ValueError("k_iters must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def as_prior(r) -> np.ndarray:
    r = np.asarray(r, dtype=float).reshape(-1)
    if np.any(r < 0) or not np.all(np.isfinite(r)):
        raise ValueError("prior must be finite and nonnegative")
    if abs(r.sum() - 1.0) > 1e-9:
        raise ValueError(f"prior must sum to 1 (got {r.sum():.17g})")
    return r


def _check_batch(logits, labels=None):
    logits = np.asarray(logits, dtype=float)
    if logits.ndim != 2:
        raise ValueError("logits must be an m x n matrix")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    if labels is None:
        return logits, None
    labels = np.asarray(labels).astype(int).reshape(-1)
    if labels.shape[0] != logits.shape[0]:
        raise ValueError(f"{labels.shape[0]} labels for {logits.shape[0]} rows")
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise ValueError("labels must lie in [0, n_classes)")
    return logits, labels


def dbot_bounds(r, delta, batch_mass=1.0):
    """Column bounds ``(1 - delta) r`` and ``(1 + delta) r``, scaled by the batch mass."""
    if not 0.0 <= delta < 1.0:
        raise ValueError("delta must lie in [0, 1)")
    r = np.asarray(r, dtype=float)
    return (1.0 - delta) * r * batch_mass, (1.0 + delta) * r * batch_mass


def cost_from_logits(logits, shift_c=None):
    """``C = c - l``; ``c`` defaults to ``max(l) + 1`` so every cost is >= 1."""
    logits = np.asarray(logits, dtype=float)
    c = float(logits.max()) + 1.0 if shift_c is None else float(shift_c)
    return c - logits


def softmax_cross_entropy(logits, labels) -> float:
    logits, labels = _check_batch(logits, labels)
    lp = log_softmax(logits, axis=1)
    return float(-np.mean(lp[np.arange(len(labels)), labels]))


def balanced_softmax_loss(logits, labels, r) -> float:
    """Cross-entropy of ``r_j e^{l_ij} / sum_k r_k e^{l_ik}``."""
    logits, labels = _check_batch(logits, labels)
    log_r = _log(as_prior(r))
    if np.any(np.isneginf(log_r[labels])):
        raise ValueError("a label has zero prior: the loss is infinite")
    lp = log_softmax(logits + log_r, axis=1)
    return float(-np.mean(lp[np.arange(len(labels)), labels]))


# ---------------------------------------------------------------------------
# unrolled scaling loss


@dataclass
class _Tape:
    log_cond: np.ndarray
    log_w: np.ndarray
    steps: list = field(default_factory=list)


def _forward(L, r, delta, k_iters):
    """Unrolled scaling iterations on the log-kernel ``L = -C / eps``.

    Column factors start at ``q = 1``, ``v = r``; each cycle updates the row
    factor and then (except in the last cycle, whose column updates cannot
    reach the row conditionals) the lower and upper column factors.
    """
    m, n = L.shape
    log_a = np.full(m, -np.log(m))
    lo, up = dbot_bounds(r, delta)
    log_bd, log_bu = _log(lo), _log(up)
    logq = np.zeros(n)
    logv = _log(r)
    steps = []
    for k in range(k_iters):
        logw = logq + logv
        row = logsumexp(L + logw, axis=1)
        logu = log_a - row
        if k == k_iters - 1:
            break
        t = logsumexp(L + logu[:, None], axis=0)
        with np.errstate(invalid="ignore"):
            mask_q = np.isfinite(log_bd) & (log_bd - t - logv > 0)
        new_q = _log_lower(log_bd, t, logv)
        with np.errstate(invalid="ignore"):
            mask_v = np.isfinite(log_bu) & (log_bu - t - new_q < 0)
        new_v = _log_upper(log_bu, t, new_q)
        steps.append(dict(logw=logw, row=row, logu=logu, t=t, mask_q=mask_q, mask_v=mask_v))
        logq, logv = new_q, new_v
    log_w = logq + logv
    return _Tape(log_softmax(L + log_w, axis=1), log_w, steps)


def _prepare(logits, labels, r, cfg):
    logits, labels = _check_batch(logits, labels)
    r = as_prior(r)
    if r.shape[0] != logits.shape[1]:
        raise ValueError(f"prior has {r.shape[0]} classes, logits have {logits.shape[1]}")
    if labels is not None and np.any(r[labels] == 0):
        raise ValueError("a label has zero prior: the loss is infinite")
    L = -cost_from_logits(logits, cfg.shift_c) / cfg.epsilon
    return L, labels, r


def dbot_loss(logits, labels, r, cfg: LossConfig | None = None) -> float:
    """Row-conditional cross-entropy of the unrolled bounded plan."""
    cfg = cfg or LossConfig()
    L, labels, r = _prepare(logits, labels, r, cfg)
    tape = _forward(L, r, cfg.delta, cfg.k_iters)
    return float(-np.mean(tape.log_cond[np.arange(len(labels)), labels]))


def dbot_loss_and_grad(logits, labels, r, cfg: LossConfig | None = None):
    """Loss and its exact gradient with respect to the logits.

    The gradient is accumulated in reverse through every unrolled update;
    the clamps contribute through whichever branch is active.
    """
    cfg = cfg or LossConfig()
    L, labels, r = _prepare(logits, labels, r, cfg)
    m = L.shape[0]
    tape = _forward(L, r, cfg.delta, cfg.k_iters)
    idx = np.arange(m)
    loss = float(-np.mean(tape.log_cond[idx, labels]))

    g_z = np.exp(tape.log_cond)
    g_z[idx, labels] -= 1.0
    g_z /= m
    g_L = g_z.copy()
    g_q = g_v = g_z.sum(axis=0)
    for st in reversed(tape.steps):
        g_av = g_v * st["mask_v"]
        g_t = -g_av
        g_q = g_q - g_av
        g_aq = g_q * st["mask_q"]
        g_t = g_t - g_aq
        g_v_prev = -g_aq
        with np.errstate(invalid="ignore"):
            T = np.exp(L + st["logu"][:, None] - st["t"][None, :])
            Rw = np.exp(L + st["logw"][None, :] - st["row"][:, None])
        T = np.nan_to_num(T)
        Rw = np.nan_to_num(Rw)
        g_L += T * g_t[None, :]
        g_u = T @ g_t
        g_L -= g_u[:, None] * Rw
        g_w = -(g_u @ Rw)
        g_q, g_v = g_w, g_w + g_v_prev
    # L = (l - c) / eps and the loss is invariant to c
    return loss, g_L / cfg.epsilon


def dbot_loss_grad(logits, labels, r, cfg: LossConfig | None = None) -> np.ndarray:
    return dbot_loss_and_grad(logits, labels, r, cfg)[1]


def finite_difference_grad(fun, x, step=1e-5):
    """Central differences of a scalar function of a matrix."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + step
        hi = fun(x)
        x[idx] = old - step
        lo = fun(x)
        x[idx] = old
        g[idx] = (hi - lo) / (2 * step)
    return g


def gradient_check(logits, labels, r, cfg: LossConfig | None = None, step=1e-5) -> float:
    """Max-abs gradient error relative to the largest finite-difference entry."""
    analytic = dbot_loss_grad(logits, labels, r, cfg)
    numeric = finite_difference_grad(lambda z: dbot_loss(z, labels, r, cfg), logits, step)
    scale = max(float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


# ---------------------------------------------------------------------------
# inference


def dbot_infer(logits, r, delta=0.1, epsilon=1.0, cfg: SolverConfig | None = None, shift_c=None):
    """Predict by solving the bounded transport problem on a batch of logits.

    Rows carry mass ``1/m`` and column masses are held to
    ``[(1 - delta) r, (1 + delta) r]``.  Returns ``(predictions, solution)``.
    """
    logits, _ = _check_batch(logits)
    r = as_prior(r)
    if r.shape[0] != logits.shape[1]:
        raise ValueError(f"prior has {r.shape[0]} classes, logits have {logits.shape[1]}")
    m = logits.shape[0]
    lo, up = dbot_bounds(r, delta)
    p = TransportProblem(cost_from_logits(logits, shift_c), np.full(m, 1.0 / m), lo, up, epsilon)
    sol = solve_bregman(p, cfg or SolverConfig(variant="bregman", max_iter=1000, tolerance=1e-9))
    return np.argmax(sol.coupling, axis=1), sol


def logit_adjust_infer(logits, counts, tau=1.0):
    """Predict ``argmax_j (l_ij - tau log n_j)``."""
    logits, _ = _check_batch(logits)
    counts = np.asarray(counts, dtype=float).reshape(-1)
    if np.any(counts <= 0):
        raise ValueError("class counts must be positive")
    if counts.shape[0] != logits.shape[1]:
        raise ValueError("counts and logits disagree on the number of classes")
    return np.argmax(logits - tau * np.log(counts), axis=1)


# ---------------------------------------------------------------------------
# desk-scale training demo


@dataclass
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    prior: np.ndarray | None = None  # training prior for the loss; None = uniform
    lr: float = 0.5
    epochs: int = 300
    seed: int = 0
    infer_delta: float = 0.1
    infer_epsilon: float = 1.0
    tau: float = 1.0


@dataclass
class LinearModel:
    weight: np.ndarray
    bias: np.ndarray

    def logits(self, X):
        return np.asarray(X, dtype=float) @ self.weight + self.bias


def train_linear(X, y, n_classes, cfg: TrainConfig) -> LinearModel:
    """Full-batch gradient descent on the unrolled loss for a linear model."""
    X = np.asarray(X, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    W = 0.01 * rng.standard_normal((X.shape[1], n_classes))
    b = np.zeros(n_classes)
    prior = np.full(n_classes, 1.0 / n_classes) if cfg.prior is None else as_prior(cfg.prior)
    for _ in range(cfg.epochs):
        _, G = dbot_loss_and_grad(X @ W + b, y, prior, cfg.loss)
        W -= cfg.lr * (X.T @ G)
        b -= cfg.lr * G.sum(axis=0)
    return LinearModel(W, b)


def evaluate_inference(model: LinearModel, splits, train_counts, cfg: TrainConfig) -> dict:
    """Accuracy of plain argmax, bounded-transport inference and logit adjustment.

    ``splits`` maps a name to ``(X, y, prior)``; the transport inference uses
    each split's own prior, logit adjustment always uses the training counts.
    """
    table = {}
    for name, (X, y, prior) in splits.items():
        logits = model.logits(X)
        pred_db, _ = dbot_infer(logits, prior, cfg.infer_delta, cfg.infer_epsilon)
        table[name] = {
            "argmax": float(np.mean(np.argmax(logits, axis=1) == y)),
            "dbot": float(np.mean(pred_db == y)),
            "logit_adjust": float(np.mean(logit_adjust_infer(logits, train_counts, cfg.tau) == y)),
        }
    return table


def train_demo(splits, cfg: TrainConfig | None = None):
    """Train on ``splits['train']`` and score every other split.

    Returns ``(model, table)``; see :func:`evaluate_inference` for the table.
    """
    cfg = cfg or TrainConfig()
    X, y, _ = splits["train"]
    if X.shape[1] != 2 or X.shape[0] > 1000:
        raise ValueError("train_demo expects at most 1000 two-dimensional points")
    n_classes = int(max(int(np.max(s[1])) for s in splits.values())) + 1
    if n_classes > 5:
        raise ValueError("train_demo supports at most 5 classes")
    model = train_linear(X, y, n_classes, cfg)
    counts = np.bincount(y, minlength=n_classes).astype(float)
    tests = {k: v for k, v in splits.items() if k != "train"}
    return model, evaluate_inference(model, tests, counts, cfg)
