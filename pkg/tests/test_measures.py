import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transtab.errors import DegenerateMeasureError, ValidationError
from transtab.measures import (
    kendall,
    kendall_batch,
    pearson,
    pearson_batch,
    rel_at_1,
    rel_at_1_batch,
    weighted_kendall,
    weighted_kendall_batch,
)


def sgn(x):
    return int(x > 0) - int(x < 0)


def kendall_oracle(m, a):
    n = len(m)
    s = sum(sgn(m[i] - m[j]) * sgn(a[i] - a[j]) for i in range(n) for j in range(i + 1, n))
    return s / (n * (n - 1) / 2)


def weighted_oracle(m, a):
    n = len(a)
    # rank 0 = largest accuracy; equal accuracies keep index order
    order = sorted(range(n), key=lambda i: (-a[i], i))
    rank = {i: r for r, i in enumerate(order)}
    num = den = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            w = 1 / (rank[i] + 1) + 1 / (rank[j] + 1)
            num += w * sgn(m[i] - m[j]) * sgn(a[i] - a[j])
            den += w
    return num / den


def pearson_oracle(m, a):
    n = len(m)
    mm, ma = sum(m) / n, sum(a) / n
    cov = sum((x - mm) * (y - ma) for x, y in zip(m, a))
    vm = sum((x - mm) ** 2 for x in m)
    va = sum((y - ma) ** 2 for y in a)
    return cov / math.sqrt(vm * va)


def test_examples():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [6, 4, 2]) == pytest.approx(-1.0)
    assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)
    assert kendall([1, 2, 3, 4, 5], [2, 3, 4, 5, 6]) == 1.0
    assert kendall([1, 2, 3, 4, 5], [5, 4, 3, 2, 1]) == -1.0
    assert kendall([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(4 / 6)
    assert weighted_kendall([1, 2, 3, 4], [1, 2, 3, 4]) == 1.0
    assert weighted_kendall([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0
    assert rel_at_1([1, 3, 2], [0.1, 0.9, 0.5]) == 1.0
    assert rel_at_1([3, 1], [0.5, 0.8]) == pytest.approx(0.625)
    assert rel_at_1([0.2, 7, -1], [0.4, 0.4, 0.4]) == 1.0


def test_weighted_kendall_random_n5():
    rng = np.random.default_rng(0)
    m, a = rng.normal(size=5), rng.normal(size=5)
    assert abs(weighted_kendall(m, a) - weighted_oracle(m, a)) < 1e-12


def test_kendall_ties_count_zero():
    assert kendall([1, 1, 2], [1, 2, 3]) == pytest.approx(2 / 3)


def test_degenerate_cases():
    with pytest.raises(DegenerateMeasureError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(DegenerateMeasureError):
        rel_at_1([1, 2], [0.0, 0.0])
    with pytest.raises(ValidationError):
        kendall([1], [1])
    with pytest.raises(ValidationError):
        kendall([1, 2], [1, 2, 3])
    assert np.isnan(pearson_batch(np.array([[1.0, 1.0]]), np.array([[1.0, 2.0]]))[0])


def test_rel_at_1_tie_goes_to_lowest_index():
    assert rel_at_1([2, 2, 1], [0.4, 0.8, 0.1]) == pytest.approx(0.5)


def test_oracles_on_1000_random_series():
    rng = np.random.default_rng(42)
    worst = {"k": 0.0, "w": 0.0, "p": 0.0}
    for _ in range(1000):
        n = int(rng.integers(3, 31))
        m = rng.normal(size=n)
        a = rng.uniform(0.1, 1.0, size=n)
        if rng.random() < 0.3:  # inject ties
            m = np.round(m, 0)
            a = np.round(a, 1)
        worst["k"] = max(worst["k"], abs(kendall_batch(m, a) - kendall_oracle(m, a)))
        worst["w"] = max(worst["w"], abs(weighted_kendall_batch(m, a) - weighted_oracle(m, a)))
        if np.ptp(m) > 0 and np.ptp(a) > 0:
            worst["p"] = max(worst["p"], abs(pearson_batch(m, a) - pearson_oracle(m, a)))
        pick = int(np.argmax(m))
        assert rel_at_1_batch(m, a) == a[pick] / a.max()
    assert worst["k"] < 1e-12 and worst["w"] < 1e-12 and worst["p"] < 1e-10


def test_batch_matches_scalar():
    rng = np.random.default_rng(1)
    m, a = rng.normal(size=(7, 3, 6)), rng.uniform(size=(7, 3, 6))
    for fn, scalar in ((kendall_batch, kendall), (weighted_kendall_batch, weighted_kendall), (pearson_batch, pearson), (rel_at_1_batch, rel_at_1)):
        out = fn(m, a)
        assert out.shape == (7, 3)
        assert out[4, 2] == pytest.approx(scalar(m[4, 2], a[4, 2]), abs=1e-15)


def test_symmetric_variant_differs_and_is_averaged():
    m, a = np.array([1.0, 4, 2, 3, 5]), np.array([0.2, 0.5, 0.4, 0.1, 0.9])
    one = weighted_kendall(m, a)
    other = weighted_kendall(a, m)
    assert weighted_kendall(m, a, symmetric=True) == pytest.approx(0.5 * (one + other), abs=1e-15)


series = st.integers(3, 12).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(-5000, 5000).map(float), min_size=n, max_size=n, unique=True),
        st.lists(st.integers(1, 1000).map(lambda v: v / 1000), min_size=n, max_size=n, unique=True),
        st.permutations(list(range(n))),
    )
)


@settings(max_examples=150, deadline=None)
@given(series)
def test_monotone_transform_invariance(s):
    m, a, _ = map(np.array, s)
    for f in (np.exp, np.arctan, lambda x: x**3 + 2):
        mt = f(m / 5000)
        assert kendall(mt, a) == kendall(m / 5000, a)
        assert weighted_kendall(mt, a) == weighted_kendall(m / 5000, a)
        assert rel_at_1(mt, a) == rel_at_1(m / 5000, a)
    assert kendall(m, np.sqrt(a)) == kendall(m, a)
    assert weighted_kendall(m, np.log(a)) == weighted_kendall(m, a)


@settings(max_examples=150, deadline=None)
@given(series, st.floats(0.1, 10), st.floats(-5, 5))
def test_pearson_affine_invariance(s, scale, shift):
    m, a, _ = map(np.array, s)
    if np.ptp(m) < 1e-6:
        return
    assert pearson(scale * m + shift, a) == pytest.approx(pearson(m, a), abs=1e-9)
    assert pearson(m, scale * a + shift) == pytest.approx(pearson(m, a), abs=1e-9)


@settings(max_examples=150, deadline=None)
@given(series)
def test_joint_permutation_symmetry(s):
    m, a, perm = map(np.array, s)
    for fn in (kendall_batch, weighted_kendall_batch, rel_at_1_batch):
        assert fn(m[perm], a[perm]) == pytest.approx(fn(m, a), abs=1e-12)
    if np.ptp(m) > 1e-6:
        assert pearson(m[perm], a[perm]) == pytest.approx(pearson(m, a), abs=1e-12)


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 1), st.floats(0, 1))
def test_two_element_agreement(m0, m1, a0, a1):
    if m0 == m1 or a0 == a1:
        return
    expected = 1.0 if (m0 - m1) * (a0 - a1) > 0 else -1.0
    assert kendall([m0, m1], [a0, a1]) == expected
    assert weighted_kendall([m0, m1], [a0, a1]) == expected
