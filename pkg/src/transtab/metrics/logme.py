from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from transtab.errors import MetricError
from transtab.io import check_features, check_labels


class ConvergenceWarning(UserWarning):
    pass


# precisions are kept finite when the evidence has no interior maximum
# (exactly predictive or uninformative features)
PRECISION_BOUNDS = (1e-12, 1e12)


@dataclass
class LogMEState:
    """Per target column: fitted prior/noise precisions and maximized log evidence."""

    alpha: np.ndarray
    beta: np.ndarray
    evidence: np.ndarray
    n_iter: np.ndarray
    converged: bool
    history: list[np.ndarray] = field(default_factory=list, repr=False)


def log_evidence(alpha, beta, s2, x2, res_out, n, d):
    """Bayesian linear-regression log marginal likelihood in SVD coordinates.

    ``s2`` are squared singular values of the feature matrix, ``x2`` the squared
    projections of the target onto the left singular vectors and ``res_out``
    the squared norm of the target outside their span.
    """
    denom = alpha + beta * s2
    m2 = np.sum(beta**2 * s2 * x2 / denom**2)
    res2 = np.sum(x2 * (alpha / denom) ** 2) + res_out
    logdet = np.sum(np.log(denom)) + (d - len(s2)) * np.log(alpha)
    return (
        0.5 * d * np.log(alpha)
        + 0.5 * n * np.log(beta)
        - 0.5 * alpha * m2
        - 0.5 * beta * res2
        - 0.5 * logdet
        - 0.5 * n * np.log(2 * np.pi)
    )


def _maximize(s2, x2, res_out, n, d, tol, max_iter, record):
    alpha, beta = 1.0, 1.0
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        denom = alpha + beta * s2
        gamma = np.sum(beta * s2 / denom)
        m2 = np.sum(beta**2 * s2 * x2 / denom**2)
        res2 = np.sum(x2 * (alpha / denom) ** 2) + res_out
        new_alpha = float(np.clip(gamma / max(m2, 1e-300), *PRECISION_BOUNDS))
        new_beta = float(np.clip((n - gamma) / max(res2, 1e-300), *PRECISION_BOUNDS))
        if record:
            trace.append(log_evidence(alpha, beta, s2, x2, res_out, n, d))
        done = abs(new_alpha - alpha) / alpha < tol and abs(new_beta - beta) / beta < tol
        alpha, beta = new_alpha, new_beta
        if done:
            converged = True
            break
    evidence = log_evidence(alpha, beta, s2, x2, res_out, n, d)
    if record:
        trace.append(evidence)
    return alpha, beta, evidence, it, converged, trace


def logme_state(features, labels, tol: float = 1e-3, max_iter: int = 100, record: bool = False) -> LogMEState:
    f = check_features(features).astype(np.float64)
    y = check_labels(labels, f.shape[0])
    if not np.any(f):
        raise MetricError("LogME: feature matrix is all zeros")
    n, d = f.shape
    u, s, _ = np.linalg.svd(f, full_matrices=False)
    rank = int(np.sum(s > s[0] * max(n, d) * np.finfo(float).eps))
    u, s2 = u[:, :rank], s[:rank] ** 2

    classes = np.unique(y)
    alphas, betas, evid, iters, history = [], [], [], [], []
    converged = True
    for c in classes:
        t = (y == c).astype(np.float64)
        proj = u.T @ t
        x2 = proj**2
        res_out = max(float(t @ t - x2.sum()), 0.0)
        a, b, e, it, ok, trace = _maximize(s2, x2, res_out, n, d, tol, max_iter, record)
        alphas.append(a)
        betas.append(b)
        evid.append(e)
        iters.append(it)
        history.append(np.array(trace))
        converged &= ok
    if not converged:
        warnings.warn("LogME: fixed-point iteration hit the iteration cap", ConvergenceWarning, stacklevel=2)
    return LogMEState(np.array(alphas), np.array(betas), np.array(evid), np.array(iters), converged, history)


def logme(features, labels) -> float:
    """Mean over one-hot label columns of the maximized log evidence per sample."""
    state = logme_state(features, labels)
    n = np.asarray(features).shape[0]
    value = float(np.mean(state.evidence) / n)
    if not np.isfinite(value):
        raise MetricError("LogME: evidence is not finite")
    return value
