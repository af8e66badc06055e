from __future__ import annotations

import numpy as np

from transtab.io import check_features, check_labels

RIDGE = 1e-6


def hscore(features, labels) -> float:
    """trace(cov(f)^+ cov(E[f|y])) with 1/n covariances and a small ridge on cov(f)."""
    f = check_features(features).astype(np.float64)
    y = check_labels(labels, f.shape[0])
    n, d = f.shape
    fc = f - f.mean(axis=0)
    cov_f = fc.T @ fc / n

    classes, inverse, counts = np.unique(y, return_inverse=True, return_counts=True)
    sums = np.zeros((len(classes), d))
    np.add.at(sums, inverse, fc)
    centered_means = sums / counts[:, None]
    cov_g = (centered_means * (counts / n)[:, None]).T @ centered_means

    lam = RIDGE * np.trace(cov_f) / d
    inv = np.linalg.pinv(cov_f + lam * np.eye(d), hermitian=True)
    return float(max(np.sum(inv * cov_g), 0.0))
