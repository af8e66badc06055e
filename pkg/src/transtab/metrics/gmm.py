"""Gaussian-mixture pseudo-labels for NLEEP.

Samples are collapsed to unique (feature, label) rows with multiplicity
weights before anything else runs, so the fit sees the same input for any
ordering or duplication of the data set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from transtab.errors import MetricError
from transtab.io import check_features, check_labels
from transtab.metrics.leep import expected_log_likelihood


@dataclass(frozen=True)
class GmmConfig:
    variance_fraction: float = 0.8
    n_components: int | None = None  # None: number of target classes
    tol: float = 1e-4
    max_iter: int = 200
    reg_covar: float = 1e-6
    seed: int = 0


@dataclass(frozen=True)
class GmmModel:
    means: np.ndarray  # (K, d)
    variances: np.ndarray  # (K, d)
    weights: np.ndarray  # (K,)
    log_likelihood: float
    n_iter: int
    converged: bool

    def log_resp(self, x: np.ndarray) -> np.ndarray:
        logp = _log_gaussians(x, self.means, self.variances) + np.log(self.weights)
        return logp - logsumexp(logp, axis=1, keepdims=True)


def _log_gaussians(x, means, variances):
    prec = 1.0 / variances
    d = x.shape[1]
    quad = (
        (x**2) @ prec.T
        - 2.0 * x @ (means * prec).T
        + np.sum(means**2 * prec, axis=1)
    )
    return -0.5 * (d * np.log(2 * np.pi) + np.sum(np.log(variances), axis=1) + quad)


def collapse(x: np.ndarray, y: np.ndarray):
    """Unique rows of ``[x, y]`` in lexicographic order, with normalized multiplicities."""
    stacked = np.column_stack([x, y.astype(np.float64)])
    uniq, counts = np.unique(stacked, axis=0, return_counts=True)
    return uniq[:, :-1], uniq[:, -1].astype(np.int64), counts / counts.sum()


def weighted_pca(x: np.ndarray, w: np.ndarray, fraction: float) -> np.ndarray:
    """Project onto the leading principal axes explaining ``fraction`` of the variance."""
    mean = w @ x
    xc = x - mean
    cov = (xc * w[:, None]).T @ xc
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = np.clip(evals[order], 0.0, None), evecs[:, order]
    total = evals.sum()
    if total <= 0:
        return xc[:, :1] * 0.0
    keep = int(np.searchsorted(np.cumsum(evals) / total, fraction - 1e-12) + 1)
    keep = min(keep, x.shape[1])
    return xc @ evecs[:, :keep]


def kmeans_pp(x: np.ndarray, w: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.choice(len(x), p=w)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        p = w * d2
        if p.sum() <= 0:
            # all mass sits on chosen centers; fall back to weight-proportional picks
            p = w.copy()
        idx = rng.choice(len(x), p=p / p.sum())
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def _m_step(x, w, resp, reg):
    nk = w @ resp + 10 * np.finfo(float).eps
    means = ((resp * w[:, None]).T @ x) / nk[:, None]
    sq = ((resp * w[:, None]).T @ (x**2)) / nk[:, None]
    variances = np.clip(sq - means**2, 0.0, None) + reg
    return means, variances, nk / nk.sum()


def fit_gmm(x: np.ndarray, w: np.ndarray, k: int, config: GmmConfig) -> GmmModel:
    """Diagonal-covariance GMM by EM on weighted samples, k-means++ initialized."""
    if len(x) < k:
        raise MetricError(f"GMM needs at least {k} distinct samples, got {len(x)}")
    rng = np.random.default_rng(config.seed)
    centers = kmeans_pp(x, w, k, rng)
    d2 = np.sum((x[:, None, :] - centers[None]) ** 2, axis=2)
    resp = np.zeros((len(x), k))
    resp[np.arange(len(x)), np.argmin(d2, axis=1)] = 1.0
    means, variances, weights = _m_step(x, w, resp, config.reg_covar)

    prev = -np.inf
    converged = False
    n_iter = 0
    ll = -np.inf
    for n_iter in range(1, config.max_iter + 1):
        logp = _log_gaussians(x, means, variances) + np.log(weights)
        norm = logsumexp(logp, axis=1)
        ll = float(w @ norm)
        resp = np.exp(logp - norm[:, None])
        means, variances, weights = _m_step(x, w, resp, config.reg_covar)
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(variances)) and np.isfinite(ll)):
            raise MetricError("GMM: EM produced non-finite parameters")
        if abs(ll - prev) < config.tol:
            converged = True
            break
        prev = ll
    return GmmModel(means, variances, weights, ll, n_iter, converged)


def nleep(features, labels, config: GmmConfig | None = None) -> float:
    """LEEP computed on GMM posteriors over PCA-reduced embeddings."""
    config = config or GmmConfig()
    x = check_features(features).astype(np.float64)
    y = check_labels(labels, x.shape[0])
    n_classes = len(np.unique(y))
    k = config.n_components or n_classes
    if x.shape[0] < k:
        raise MetricError(f"NLEEP: {x.shape[0]} samples fewer than {k} GMM components")

    ux, uy, w = collapse(x, y)
    z = weighted_pca(ux, w, config.variance_fraction)
    model = fit_gmm(z, w, k, config)
    theta = np.exp(model.log_resp(z))
    return expected_log_likelihood(theta, uy, w)
