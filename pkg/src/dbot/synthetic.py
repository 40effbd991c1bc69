"""Small synthetic datasets for demos, sweeps and the acceptance suite."""

from __future__ import annotations

import numpy as np

# five well-spread 2-D centres in the unit square
FIVE_CENTERS = np.array([[0.2, 0.2], [0.8, 0.2], [0.5, 0.5], [0.2, 0.8], [0.8, 0.8]])


def gaussian_blobs(n_per=30, centers=FIVE_CENTERS, std=0.08, seed=0):
    """Isotropic Gaussian clusters; returns ``(points, labels)``."""
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=float)
    counts = np.broadcast_to(np.asarray(n_per), (len(centers),))
    pts, labels = [], []
    for c, (mu, cnt) in enumerate(zip(centers, counts)):
        pts.append(mu + std * rng.standard_normal((int(cnt), centers.shape[1])))
        labels.append(np.full(int(cnt), c))
    return np.vstack(pts), np.concatenate(labels)


def long_tail_profile(n_classes, imbalance, head=None):
    """Exponentially decaying class proportions with head/tail ratio ``imbalance``."""
    ratios = imbalance ** (-np.arange(n_classes) / max(n_classes - 1, 1))
    if head is not None:
        ratios = ratios * head / ratios[0]
    return ratios / ratios.sum()


def class_counts(total, proportions):
    """Integer counts summing to ``total`` (largest-remainder rounding)."""
    p = np.asarray(proportions, dtype=float)
    raw = total * p / p.sum()
    counts = np.floor(raw).astype(int)
    short = total - counts.sum()
    counts[np.argsort(-(raw - counts), kind="stable")[:short]] += 1
    return np.maximum(counts, 1)


def long_tailed_splits(n_classes=5, imbalance=10.0, n_train=600, n_test=300, std=0.25,
                       radius=0.5, seed=0):
    """Overlapping 2-D classes on a circle with LT / uniform / reverse-LT test sets.

    Returns a dict with ``train`` and ``test_lt``, ``test_uniform``,
    ``test_reverse``; each entry is ``(points, labels, prior)`` where prior
    is the empirical label distribution.
    """
    rng = np.random.default_rng(seed)
    angles = 2 * np.pi * np.arange(n_classes) / n_classes
    centers = radius * np.column_stack([np.cos(angles), np.sin(angles)])
    lt = long_tail_profile(n_classes, imbalance)
    profiles = {
        "train": (n_train, lt),
        "test_lt": (n_test, lt),
        "test_uniform": (n_test, np.full(n_classes, 1.0 / n_classes)),
        "test_reverse": (n_test, lt[::-1]),
    }
    out = {}
    for name, (total, prof) in profiles.items():
        counts = class_counts(total, prof)
        X = np.vstack([centers[c] + std * rng.standard_normal((counts[c], 2)) for c in range(n_classes)])
        y = np.repeat(np.arange(n_classes), counts)
        order = rng.permutation(len(y))
        out[name] = (X[order], y[order], counts / counts.sum())
    return out
