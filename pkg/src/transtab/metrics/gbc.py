from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from transtab.errors import MetricError
from transtab.io import check_features, check_labels

VARIANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class GaussianClassModel:
    class_id: int
    mean: np.ndarray
    variance: np.ndarray  # per-dimension; constant across dims in spherical mode
    sample_count: int


def fit_class_gaussians(features, labels, cov_mode: str = "diagonal") -> list[GaussianClassModel]:
    if cov_mode not in ("diagonal", "spherical"):
        raise ValueError(f"cov_mode must be 'diagonal' or 'spherical', got {cov_mode!r}")
    x = check_features(features).astype(np.float64)
    y = check_labels(labels, x.shape[0])
    models = []
    for c in np.unique(y):
        xc = x[y == c]
        if len(xc) < 2:
            raise MetricError(f"GBC: class {int(c)} has {len(xc)} sample(s), need at least 2")
        var = xc.var(axis=0)
        if cov_mode == "spherical":
            var = np.full_like(var, var.mean())
        models.append(GaussianClassModel(int(c), xc.mean(axis=0), var + VARIANCE_FLOOR, len(xc)))
    return models


def bhattacharyya_distance(a: GaussianClassModel, b: GaussianClassModel) -> float:
    avg = 0.5 * (a.variance + b.variance)
    diff = a.mean - b.mean
    mahal = 0.125 * np.sum(diff**2 / avg)
    logdet = 0.5 * np.sum(np.log(avg) - 0.5 * (np.log(a.variance) + np.log(b.variance)))
    return float(mahal + logdet)


def gbc(features, labels, cov_mode: str = "diagonal") -> float:
    """Negative sum of pairwise Bhattacharyya coefficients between class Gaussians."""
    models = fit_class_gaussians(features, labels, cov_mode)
    total = sum(np.exp(-bhattacharyya_distance(a, b)) for a, b in combinations(models, 2))
    return -float(total)
