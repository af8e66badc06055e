from __future__ import annotations

import numpy as np

from transtab.io import check_labels


def inclusion_probabilities(labels, n_keep: int) -> np.ndarray:
    """Per-sample inclusion probabilities proportional to inverse class frequency.

    Probabilities sum to ``n_keep``; any that would exceed 1 are capped and the
    excess is redistributed over the rest.
    """
    y = check_labels(labels)
    _, inverse, counts = np.unique(y, return_inverse=True, return_counts=True)
    w = 1.0 / counts[inverse]
    pi = np.zeros_like(w)
    capped = np.zeros(len(w), dtype=bool)
    remaining = float(n_keep)
    while True:
        free = ~capped
        pi[free] = remaining * w[free] / w[free].sum()
        over = free & (pi >= 1.0)
        if not over.any():
            break
        capped |= over
        pi[capped] = 1.0
        remaining = n_keep - capped.sum()
    return pi


def subsample_indices(labels, n_keep: int, seed: int = 0) -> np.ndarray:
    """Sorted row indices of a class-balanced sample of size ``min(n_keep, n)``.

    Uses systematic PPS sampling over a random permutation, so each row is kept
    with exactly its inclusion probability and the sample size is fixed.
    """
    if n_keep < 1:
        raise ValueError("n_keep must be at least 1")
    y = check_labels(labels)
    n = len(y)
    if n_keep >= n:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    pi = inclusion_probabilities(y, n_keep)
    order = rng.permutation(n)
    cum = np.concatenate([[0.0], np.cumsum(pi[order])])
    start = rng.random()
    hits = np.floor(cum[1:] - start + 1e-12) - np.floor(cum[:-1] - start + 1e-12)
    chosen = np.sort(order[hits > 0])
    if len(chosen) != n_keep:
        # float drift at the last boundary; resolve by highest fractional inclusion
        missing = np.setdiff1d(np.arange(n), chosen)
        extra = missing[np.argsort(-pi[missing], kind="stable")][: n_keep - len(chosen)]
        chosen = np.sort(np.concatenate([chosen, extra]))[:n_keep]
    return chosen


def balanced_subsample(features, labels, n_keep: int, seed: int = 0):
    """Keep ``n_keep`` rows, sampling classes inversely to their frequency."""
    if n_keep < 1:
        raise ValueError("n_keep must be at least 1")
    features = np.asarray(features)
    y = check_labels(labels, features.shape[0])
    if n_keep >= len(y):
        return features, y
    idx = subsample_indices(y, n_keep, seed)
    return features[idx], y[idx]
