from __future__ import annotations

import numpy as np
import pytest

from transtab import engine
from transtab.scenarios import SyntheticSpec, generate_synthetic_scenario


def random_cache(n_sources, n_targets, shared=False, metrics=("leep", "nleep", "logme", "gbc", "hscore"), seed=0, ties=False):
    """Cache with random values; with ``shared`` the first n_targets sources double as targets."""
    rng = np.random.default_rng(seed)
    sources = tuple(f"d{i:02d}" for i in range(n_sources)) if shared else tuple(f"s{i:02d}" for i in range(n_sources))
    targets = sources[:n_targets] if shared else tuple(f"t{i:02d}" for i in range(n_targets))
    shape = (len(metrics), n_sources, n_targets)
    values = rng.normal(size=shape)
    if ties:
        values = np.round(values, 0)
    accuracy = rng.uniform(0.2, 0.95, size=shape[1:])
    status = np.full(shape, engine.OK, dtype=np.int8)
    if shared:
        for t in range(n_targets):
            values[:, t, t] = np.nan
            accuracy[t, t] = np.nan
            status[:, t, t] = engine.NOT_APPLICABLE
    evaluations = int(np.sum(status != engine.NOT_APPLICABLE))
    return engine.MetricCache(tuple(metrics), sources, targets, values, accuracy, status, evaluations)


@pytest.fixture(scope="session")
def small_scenario(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthetic")
    spec = SyntheticSpec(n_sources=5, n_targets=3, pool_size=3, sigma=0.05, seed=11)
    return generate_synthetic_scenario(spec, out)


ACCEPTANCE: list[str] = []


@pytest.fixture
def verdict():
    """Record one acceptance line, then assert it."""

    def record(number: int, ok: bool, detail: str):
        ACCEPTANCE.append(f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
