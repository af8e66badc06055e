"""Transferability metrics: LEEP, NLEEP, LogME, GBC, H-score and the NumC baseline.

Every metric takes target-side data produced by one source model and returns
a float where larger means "predicted to transfer better".
"""

from __future__ import annotations

import numpy as np

from transtab.metrics.baseline import numc
from transtab.metrics.gbc import GaussianClassModel, bhattacharyya_distance, fit_class_gaussians, gbc
from transtab.metrics.gmm import GmmConfig, GmmModel, fit_gmm, nleep
from transtab.metrics.hscore import hscore
from transtab.metrics.leep import expected_log_likelihood, leep
from transtab.metrics.logme import ConvergenceWarning, LogMEState, logme, logme_state
from transtab.metrics.subsample import balanced_subsample, inclusion_probabilities, subsample_indices

__all__ = [
    "ConvergenceWarning",
    "GaussianClassModel",
    "GmmConfig",
    "GmmModel",
    "LogMEState",
    "balanced_subsample",
    "bhattacharyya_distance",
    "compute_metric",
    "expected_log_likelihood",
    "fit_class_gaussians",
    "fit_gmm",
    "gbc",
    "hscore",
    "inclusion_probabilities",
    "leep",
    "logme",
    "logme_state",
    "nleep",
    "numc",
    "subsample_indices",
]


def compute_metric(
    name: str,
    labels,
    features=None,
    predictions=None,
    gmm: GmmConfig | None = None,
    cov_mode: str = "diagonal",
) -> float:
    """Dispatch by metric name; raises ``ValueError`` when required inputs are missing."""
    if name == "numc":
        return numc(labels)
    if name == "leep":
        if predictions is None:
            raise ValueError("leep needs a prediction matrix")
        return leep(predictions, labels)
    if features is None:
        raise ValueError(f"{name} needs a feature matrix")
    features = np.asarray(features, dtype=np.float64)
    if name == "nleep":
        return nleep(features, labels, gmm)
    if name == "logme":
        return logme(features, labels)
    if name == "gbc":
        return gbc(features, labels, cov_mode)
    if name == "hscore":
        return hscore(features, labels)
    raise ValueError(f"unknown metric {name!r}")
