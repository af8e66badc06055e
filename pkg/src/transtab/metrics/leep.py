from __future__ import annotations

import numpy as np

from transtab.errors import MetricError
from transtab.io import check_labels, check_predictions


def expected_log_likelihood(theta: np.ndarray, labels: np.ndarray, weights: np.ndarray | None = None) -> float:
    """LEEP score for soft pseudo-labels ``theta`` (n x z) and integer ``labels``.

    ``weights`` are per-sample probabilities (uniform when omitted). Source
    classes that receive no mass anywhere are dropped from the conditional.
    """
    theta = np.asarray(theta, dtype=np.float64)
    n = theta.shape[0]
    if n == 0:
        raise MetricError("LEEP needs at least one sample")
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)
    _, y = np.unique(labels, return_inverse=True)
    n_classes = int(y.max()) + 1

    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    joint = (onehot * w[:, None]).T @ theta  # (C, z)
    marginal = joint.sum(axis=0)
    keep = marginal > 0
    cond = joint[:, keep] / marginal[keep]  # P(y | z)

    eep = np.einsum("iz,iz->i", theta[:, keep], cond[y])
    with np.errstate(divide="ignore"):
        logs = np.log(eep)
    if not np.all(np.isfinite(logs)):
        raise MetricError("LEEP: a sample has zero likelihood under every source class")
    return float(min(np.dot(w, logs), 0.0))


def leep(predictions, labels) -> float:
    """Log expected empirical prediction of target labels given source-classifier outputs."""
    p = check_predictions(predictions)
    y = check_labels(labels, p.shape[0])
    return expected_log_likelihood(p, y)
