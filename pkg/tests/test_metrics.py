import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from transtab.errors import MetricError
from transtab.metrics import (
    GmmConfig,
    balanced_subsample,
    compute_metric,
    gbc,
    hscore,
    inclusion_probabilities,
    leep,
    logme,
    logme_state,
    nleep,
    numc,
    subsample_indices,
)
from transtab.metrics.logme import ConvergenceWarning


# ---------- oracles ----------

def leep_oracle(theta, y):
    n, z = theta.shape
    classes = sorted(set(int(v) for v in y))
    joint = {(c, j): 0.0 for c in classes for j in range(z)}
    for i in range(n):
        for j in range(z):
            joint[(int(y[i]), j)] += theta[i, j] / n
    marg = [sum(joint[(c, j)] for c in classes) for j in range(z)]
    total = 0.0
    for i in range(n):
        s = 0.0
        for j in range(z):
            if marg[j] > 0:
                s += joint[(int(y[i]), j)] / marg[j] * theta[i, j]
        total += math.log(s)
    return total / n


def hscore_oracle(f, y, ridge=1e-6):
    n, d = f.shape
    cov_f = np.cov(f, rowvar=False, bias=True).reshape(d, d)
    g = np.empty_like(f)
    for c in np.unique(y):
        g[y == c] = f[y == c].mean(axis=0)
    cov_g = np.cov(g, rowvar=False, bias=True).reshape(d, d)
    lam = ridge * np.trace(cov_f) / d
    return float(np.trace(np.linalg.solve(cov_f + lam * np.eye(d), cov_g)))


def dense_log_evidence(log_alpha, log_beta, f, t):
    alpha, beta = math.exp(log_alpha), math.exp(log_beta)
    n, d = f.shape
    a = alpha * np.eye(d) + beta * f.T @ f
    m = beta * np.linalg.solve(a, f.T @ t)
    r = t - f @ m
    _, logdet = np.linalg.slogdet(a)
    return 0.5 * d * math.log(alpha) + 0.5 * n * math.log(beta) - 0.5 * n * math.log(2 * math.pi) - 0.5 * beta * r @ r - 0.5 * alpha * m @ m - 0.5 * logdet


def grid_max_evidence(f, t):
    """Exhaustive grid over logspace[1e-4, 1e4]^2, refined locally inside the box."""
    lo, hi = math.log(1e-4), math.log(1e4)
    grid = np.linspace(lo, hi, 81)
    vals = np.array([[dense_log_evidence(a, b, f, t) for b in grid] for a in grid])
    ia, ib = np.unravel_index(np.argmax(vals), vals.shape)
    res = minimize(lambda p: -dense_log_evidence(p[0], p[1], f, t), [grid[ia], grid[ib]], bounds=[(lo, hi), (lo, hi)], method="L-BFGS-B", options={"ftol": 1e-14, "gtol": 1e-10})
    interior = all(lo + 0.1 < v < hi - 0.1 for v in res.x)
    return max(-res.fun, vals.max()), interior


def random_preds(rng, n, z):
    p = rng.dirichlet(np.ones(z), size=n)
    return p


# ---------- LEEP ----------

def test_leep_one_hot_is_zero():
    y = np.array([0, 1, 2, 1, 0])
    assert leep(np.eye(3)[y], y) == pytest.approx(0.0, abs=1e-12)


def test_leep_uniform_two_classes():
    y = np.array([0, 1] * 5)
    assert leep(np.full((10, 2), 0.5), y) == pytest.approx(math.log(0.5), abs=1e-12)


def test_leep_matches_oracle_random_20x3():
    rng = np.random.default_rng(0)
    p, y = random_preds(rng, 20, 3), rng.integers(0, 2, 20)
    assert abs(leep(p, y) - leep_oracle(p, y)) < 1e-10


def test_leep_oracle_100_instances():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        n, z, c = int(rng.integers(2, 101)), int(rng.integers(1, 8)), int(rng.integers(1, 6))
        p = random_preds(rng, n, z)
        if rng.random() < 0.3:
            p[:, 0] = 0.0  # zero-mass source column
            p /= np.where(p.sum(1, keepdims=True) > 0, p.sum(1, keepdims=True), 1)
            p[p.sum(1) == 0, -1] = 1.0
        y = rng.integers(0, c, n)
        worst = max(worst, abs(leep(p, y) - leep_oracle(p, y)))
    assert worst < 1e-10


# ---------- NLEEP ----------

def two_clusters(sep, n=40, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    x = rng.normal(size=(n, 2))
    x[:, 0] += np.where(y == 1, sep / 2, -sep / 2)
    return x, y


def test_nleep_monotone_in_separation():
    scores = [nleep(*two_clusters(s), GmmConfig(n_components=2, seed=0)) for s in (1, 5, 25)]
    assert scores[0] < scores[1] < scores[2] <= 0
    assert scores[2] > -1e-3


def test_nleep_seed_deterministic_and_permutation_invariant():
    x, y = two_clusters(2.0, n=60, seed=3)
    cfg = GmmConfig(seed=5)
    base = nleep(x, y, cfg)
    assert nleep(x, y, cfg) == base
    perm = np.random.default_rng(9).permutation(len(y))
    assert abs(nleep(x[perm], y[perm], cfg) - base) < 1e-8


def test_nleep_duplication_invariant():
    x, y = two_clusters(2.0, n=60, seed=4)
    cfg = GmmConfig(seed=1)
    assert abs(nleep(np.vstack([x, x]), np.concatenate([y, y]), cfg) - nleep(x, y, cfg)) < 1e-10


def test_nleep_too_few_samples():
    with pytest.raises(MetricError):
        nleep(np.zeros((1, 2)), np.array([0]), GmmConfig(n_components=3))


# ---------- LogME ----------

def test_logme_matches_grid_oracle():
    compared = 0
    worst = 0.0
    for seed in range(15):
        rng = np.random.default_rng(seed)
        y = np.array([0, 0, 0, 1, 1, 1])
        f = np.eye(2)[y] + 0.5 * rng.normal(size=(6, 2))
        state = logme_state(f, y)
        for ci, c in enumerate((0, 1)):
            best, interior = grid_max_evidence(f, (y == c).astype(float))
            if not interior:
                continue
            compared += 1
            worst = max(worst, abs(best - state.evidence[ci]))
    assert compared >= 10
    assert worst < 1e-3


def test_logme_evidence_non_decreasing():
    violations = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, d = int(rng.integers(6, 40)), int(rng.integers(1, 6))
        y = rng.integers(0, 3, n)
        f = rng.normal(size=(n, d)) + 0.5 * np.eye(3, d)[y]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            state = logme_state(f, y, record=True)
        for h in state.history:
            violations += int(np.sum(np.diff(h) < -1e-9 * np.maximum(1.0, np.abs(h[1:]))))
    assert violations == 0


def test_logme_predictive_beats_noise():
    rng = np.random.default_rng(0)
    y = np.arange(40) % 4
    assert logme(np.eye(4)[y], y) > logme(rng.normal(size=(40, 4)), y)


def test_logme_permutation_invariant():
    rng = np.random.default_rng(2)
    y = rng.integers(0, 3, 30)
    f = rng.normal(size=(30, 5)) + np.eye(3, 5)[y]
    perm = rng.permutation(30)
    assert abs(logme(f[perm], y[perm]) - logme(f, y)) < 1e-8


def test_logme_zero_features():
    with pytest.raises(MetricError):
        logme(np.zeros((5, 2)), np.array([0, 1, 0, 1, 0]))


# ---------- GBC ----------

def test_gbc_identical_classes():
    x = np.array([[0.0], [2.0], [2.0], [0.0]])
    assert gbc(x, np.array([0, 0, 1, 1])) == pytest.approx(-1.0, abs=1e-12)


def test_gbc_one_dimensional_closed_form():
    # class 0: mean 0, population variance 1; class 1: mean 1, variance 1
    x = np.array([[-1.0], [1.0], [0.0], [2.0]])
    value = gbc(x, np.array([0, 0, 1, 1]))
    assert abs(value - (-math.exp(-1 / 8))) < 1e-6
    assert value == pytest.approx(-0.8825, abs=5e-5)


@pytest.mark.parametrize("mode", ["diagonal", "spherical"])
def test_gbc_grows_with_separation(mode):
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1, 2], 20)
    noise = rng.normal(size=(60, 3))
    near = gbc(noise + np.eye(3)[y], y, mode)
    far = gbc(noise + 10 * np.eye(3)[y], y, mode)
    assert near < far <= 0


def test_gbc_small_class():
    with pytest.raises(MetricError, match="class 2"):
        gbc(np.zeros((5, 1)), np.array([0, 0, 1, 1, 2]))


# ---------- H-score ----------

def test_hscore_matches_dense_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        y = rng.integers(0, 3, 50)
        f = rng.normal(size=(50, 4)) + np.eye(3, 4)[y]
        assert abs(hscore(f, y) - hscore_oracle(f, y)) < 1e-8


def test_hscore_sign_feature_is_one():
    y = np.array([0, 1] * 10)
    assert hscore((2.0 * y - 1.0)[:, None], y) == pytest.approx(1.0, abs=1e-5)


def test_hscore_independent_is_zero():
    block = np.random.default_rng(1).normal(size=(10, 3))
    f = np.vstack([block, block[::-1]])
    y = np.repeat([0, 1], 10)
    assert abs(hscore(f, y)) < 1e-6


# ---------- NumC ----------

def test_numc():
    assert numc([0, 1, 2, 3, 4]) == 5
    assert numc([7, 7, 7]) == 1
    labels = np.arange(100 * 3) % 100
    kept = np.isin(labels, np.random.default_rng(0).choice(100, 50, replace=False))
    assert numc(labels[kept]) == 50


# ---------- subsampling ----------

def test_inclusion_uniform_when_balanced():
    p = inclusion_probabilities(np.arange(100) % 4, 40)
    assert np.allclose(p, 0.4)


def test_balanced_subsample_ninety_ten():
    y = np.r_[np.zeros(9000, int), np.ones(1000, int)]
    fractions = [np.mean(y[subsample_indices(y, 1000, seed)] == 1) for seed in range(100)]
    assert abs(np.mean(fractions) - 0.5) <= 0.05


def test_subsample_identity_and_determinism():
    rng = np.random.default_rng(0)
    f, y = rng.normal(size=(30, 2)), rng.integers(0, 3, 30)
    f2, y2 = balanced_subsample(f, y, 30, seed=1)
    assert np.array_equal(f2, f) and np.array_equal(y2, y)
    assert np.array_equal(subsample_indices(y, 10, 4), subsample_indices(y, 10, 4))
    assert len(subsample_indices(y, 10, 4)) == 10


# ---------- invariants ----------

@st.composite
def instances(draw):
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    c = draw(st.integers(2, 4))
    per = draw(st.integers(3, 8))
    d = draw(st.integers(1, 4))
    y = np.repeat(np.arange(c), per)
    f = rng.normal(size=(len(y), d)) + draw(st.floats(0, 3)) * np.eye(c, d)[y]
    p = rng.dirichlet(np.ones(c + 1), size=len(y))
    return f, p, y, rng.permutation(len(y))


@settings(max_examples=40, deadline=None)
@given(instances())
def test_bounds_and_permutation(inst):
    f, p, y, perm = inst
    c = len(np.unique(y))
    cfg = GmmConfig(seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        vals = {m: compute_metric(m, y, features=f, predictions=p, gmm=cfg) for m in ("leep", "nleep", "logme", "gbc", "hscore", "numc")}
        permuted = {m: compute_metric(m, y[perm], features=f[perm], predictions=p[perm], gmm=cfg) for m in vals}
    assert vals["leep"] <= 1e-12 and vals["nleep"] <= 1e-12
    assert -c * (c - 1) / 2 - 1e-12 <= vals["gbc"] <= 0
    assert vals["hscore"] >= 0
    for m in vals:
        assert abs(vals[m] - permuted[m]) < 1e-8, m


@settings(max_examples=40, deadline=None)
@given(instances(), st.floats(-50, 50))
def test_shift_invariance(inst, shift):
    f, _, y, _ = inst
    g = f + shift * np.linspace(1, 2, f.shape[1])
    assert abs(gbc(g, y) - gbc(f, y)) < 1e-6
    assert abs(hscore(g, y) - hscore(f, y)) < 1e-6
