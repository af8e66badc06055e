"""Evaluation measures scoring how well metric values M predict accuracies A.

Each measure has a batched form operating along the last axis of ``(..., n)``
arrays, returning NaN where the measure is undefined (zero variance, all-zero
accuracies, or NaN inputs), plus a scalar wrapper that raises instead.
"""

from __future__ import annotations

import numpy as np

from transtab.errors import DegenerateMeasureError, ValidationError


def _check_pair(m, a) -> tuple[np.ndarray, np.ndarray]:
    m = np.asarray(m, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if m.ndim != 1 or a.ndim != 1 or m.shape != a.shape:
        raise ValidationError(f"paired series must be equal-length vectors, got {m.shape} and {a.shape}")
    if m.size < 2:
        raise ValidationError("paired series need at least 2 entries")
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(a))):
        raise ValidationError("paired series must be finite")
    return m, a


def _pair_signs(x: np.ndarray) -> np.ndarray:
    """sgn(x_i - x_j) for i < j, flattened on the last axis."""
    n = x.shape[-1]
    iu, ju = np.triu_indices(n, 1)
    return np.sign(x[..., iu] - x[..., ju])


def _invalid(m, a):
    return np.isnan(m).any(axis=-1) | np.isnan(a).any(axis=-1)


def pearson_batch(m, a) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    mc = m - m.mean(axis=-1, keepdims=True)
    ac = a - a.mean(axis=-1, keepdims=True)
    num = np.sum(mc * ac, axis=-1)
    den = np.sqrt(np.sum(mc * mc, axis=-1) * np.sum(ac * ac, axis=-1))
    flat = (np.ptp(m, axis=-1) == 0) | (np.ptp(a, axis=-1) == 0) | _invalid(m, a)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.clip(num / den, -1.0, 1.0)
    return np.where(flat, np.nan, r)


def kendall_batch(m, a) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    n = m.shape[-1]
    s = _pair_signs(m) * _pair_signs(a)
    tau = s.sum(axis=-1) / (n * (n - 1) / 2)
    return np.where(_invalid(m, a), np.nan, tau)


def _hyperbolic_weights(x: np.ndarray) -> np.ndarray:
    # zero-based rank by decreasing value; equal values keep index order
    order = np.argsort(-x, axis=-1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(x.shape[-1]), axis=-1)
    return 1.0 / (rank + 1.0)


def _weighted_tau(s: np.ndarray, w: np.ndarray) -> np.ndarray:
    n = w.shape[-1]
    iu, ju = np.triu_indices(n, 1)
    pw = w[..., iu] + w[..., ju]
    return np.sum(pw * s, axis=-1) / np.sum(pw, axis=-1)


def weighted_kendall_batch(m, a, symmetric: bool = False) -> np.ndarray:
    """Kendall tau with each pair weighted by ``1/(r_i+1) + 1/(r_j+1)``.

    Ranks ``r`` come from decreasing accuracy. ``symmetric=True`` averages this
    with the same statistic ranked by decreasing metric value.
    """
    m = np.asarray(m, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    bad = _invalid(m, a)
    m0 = np.where(np.isnan(m), 0.0, m)
    a0 = np.where(np.isnan(a), 0.0, a)
    s = _pair_signs(m0) * _pair_signs(a0)
    tau = _weighted_tau(s, _hyperbolic_weights(a0))
    if symmetric:
        tau = 0.5 * (tau + _weighted_tau(s, _hyperbolic_weights(m0)))
    return np.where(bad, np.nan, tau)


def rel_at_1_batch(m, a) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    bad = _invalid(m, a)
    m0 = np.where(np.isnan(m), -np.inf, m)
    pick = np.take_along_axis(a, np.argmax(m0, axis=-1)[..., None], axis=-1)[..., 0]
    best = a.max(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = pick / best
    return np.where(bad | ~(best > 0), np.nan, rel)


BATCH = {
    "pearson": pearson_batch,
    "kendall": kendall_batch,
    "weighted_kendall": weighted_kendall_batch,
    "rel_at_1": rel_at_1_batch,
}


def evaluate(measure: str, m, a) -> float:
    """Scalar measure value; raises DegenerateMeasureError when undefined."""
    try:
        fn = BATCH[measure]
    except KeyError:
        raise ValueError(f"unknown measure {measure!r}") from None
    m, a = _check_pair(m, a)
    value = float(fn(m, a))
    if np.isnan(value):
        raise DegenerateMeasureError(f"{measure} is undefined for this series")
    return value


def pearson(m, a) -> float:
    return evaluate("pearson", m, a)


def kendall(m, a) -> float:
    return evaluate("kendall", m, a)


def weighted_kendall(m, a, symmetric: bool = False) -> float:
    m, a = _check_pair(m, a)
    return float(weighted_kendall_batch(m, a, symmetric=symmetric))


def rel_at_1(m, a) -> float:
    """Accuracy of the top-scored model relative to the best one; ties go to the lowest index."""
    return evaluate("rel_at_1", m, a)
