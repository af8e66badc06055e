"""Setup Stability and win rates over an experiment set.

Two experiments are connected when they differ in exactly one component
(source pool, target or measure). Their agreement is the Kendall tau between
their per-metric quality vectors; Setup Stability is the mean agreement over
all connected pairs for a component.
"""

from __future__ import annotations

import io as _io
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from math import comb
from typing import Iterator, Mapping, Sequence

import numpy as np

from transtab.engine import ExperimentSet, format_value
from transtab.errors import ValidationError

COMPONENTS = ("source_pool", "target", "measure")
DEFAULT_BUDGET = 1_000_000
CHUNK = 1 << 20


def agreement(o1, o2) -> float:
    """Kendall tau between two quality vectors, over metrics defined in both.

    Accepts dicts keyed by metric name or equal-length sequences. Returns NaN
    when fewer than two metrics are defined in both outcomes.
    """
    if isinstance(o1, Mapping):
        if set(o1) != set(o2):
            raise ValueError("outcomes must cover the same metrics")
        keys = sorted(o1)
        o1, o2 = [o1[k] for k in keys], [o2[k] for k in keys]
    q = np.array([o1, o2], dtype=np.float64)
    num, m = _agreement_parts(_pair_signs(q), ~np.isnan(q), np.array([0]), np.array([1]))
    return float(num[0]) / comb(int(m[0]), 2) if m[0] >= 2 else float("nan")


def _pair_signs(quality: np.ndarray) -> np.ndarray:
    iu, ju = np.triu_indices(quality.shape[1], 1)
    s = np.sign(quality[:, iu] - quality[:, ju])
    return np.nan_to_num(s, nan=0.0).astype(np.int8)


def _agreement_parts(signs, defined, i, j):
    num = np.einsum("ep,ep->e", signs[i].astype(np.int32), signs[j].astype(np.int32))
    common = np.sum(defined[i] & defined[j], axis=1)
    return num, common


@dataclass
class _Groups:
    order: np.ndarray  # experiment rows sorted by group
    starts: np.ndarray
    sizes: np.ndarray
    pair_cum: np.ndarray  # cumulative pair counts per group

    @property
    def total_pairs(self) -> int:
        return int(self.pair_cum[-1]) if len(self.pair_cum) else 0


def _groups(xs: ExperimentSet, component: str) -> _Groups:
    if component not in COMPONENTS:
        raise ValueError(f"component must be one of {COMPONENTS}, got {component!r}")
    keys = xs.keys()
    a, b = (keys[c] for c in COMPONENTS if c != component)
    gid = a.astype(np.int64) * (int(b.max(initial=0)) + 1) + b
    full = gid * (int(keys[component].max(initial=0)) + 1) + keys[component]
    if len(np.unique(full)) != len(full):
        raise ValidationError("experiment set contains duplicate (source pool, target, measure) rows")
    order = np.argsort(gid, kind="stable")
    _, starts, sizes = np.unique(gid[order], return_index=True, return_counts=True)
    pairs = sizes.astype(np.int64) * (sizes - 1) // 2
    return _Groups(order, starts, sizes, np.cumsum(pairs))


def _decode(g: _Groups, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map global pair indices to experiment-row pairs (colex order within each group)."""
    grp = np.searchsorted(g.pair_cum, idx, side="right")
    local = idx - (g.pair_cum[grp] - g.sizes[grp] * (g.sizes[grp] - 1) // 2)
    hi = np.floor((1 + np.sqrt(1 + 8 * local.astype(np.float64))) / 2).astype(np.int64)
    hi -= hi * (hi - 1) // 2 > local
    hi += (hi + 1) * hi // 2 <= local
    lo = local - hi * (hi - 1) // 2
    base = g.starts[grp]
    return g.order[base + lo], g.order[base + hi]


def _edge_chunks(xs: ExperimentSet, component: str, budget: int | None, seed: int):
    g = _groups(xs, component)
    total = g.total_pairs
    if budget is None or budget >= total:
        mode = "exact"

        def gen() -> Iterator:
            for start in range(0, total, CHUNK):
                yield _decode(g, np.arange(start, min(start + CHUNK, total), dtype=np.int64))
    else:
        mode = "sampled"
        rng = np.random.default_rng(seed)
        picks = np.sort(rng.choice(total, size=budget, replace=False)).astype(np.int64)

        def gen() -> Iterator:
            for start in range(0, len(picks), CHUNK):
                yield _decode(g, picks[start : start + CHUNK])

    return mode, total, gen()


def build_edges(xs: ExperimentSet, component: str, pair_budget: int | None = None, seed: int = 0):
    """Experiment-row pairs ``(i, j)`` differing only in ``component``.

    With ``pair_budget`` set below the number of such pairs, a uniform sample
    without replacement is drawn; otherwise all pairs are returned.
    """
    _, _, chunks = _edge_chunks(xs, component, pair_budget, seed)
    parts = list(chunks)
    if not parts:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def edge_agreements(xs: ExperimentSet, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    signs, defined = _pair_signs(xs.quality), ~np.isnan(xs.quality)
    num, m = _agreement_parts(signs, defined, i, j)
    den = m * (m - 1) / 2
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(m >= 2, num / den, np.nan)


@dataclass
class StabilityResult:
    component: str
    ss: float | None
    edges: int
    undefined_edges: int
    available_pairs: int
    mode: str
    budget: int | None
    seed: int
    note: str = ""


def setup_stability(
    xs: ExperimentSet,
    component: str,
    mode: str = "sampled",
    budget: int = DEFAULT_BUDGET,
    seed: int = 0,
) -> StabilityResult:
    """Mean agreement over experiment pairs differing only in ``component``.

    The sum is accumulated as exact rationals, so the result does not depend on
    edge order or chunking.
    """
    if mode not in ("exact", "sampled"):
        raise ValueError("mode must be 'exact' or 'sampled'")
    signs, defined = _pair_signs(xs.quality), ~np.isnan(xs.quality)
    used, total, chunks = _edge_chunks(xs, component, budget if mode == "sampled" else None, seed)
    # numerator sums keyed by number of commonly defined metrics
    sums: dict[int, int] = {}
    edges = undefined = 0
    for i, j in chunks:
        num, m = _agreement_parts(signs, defined, i, j)
        edges += len(i)
        ok = m >= 2
        undefined += int(np.sum(~ok))
        for mc in np.unique(m[ok]):
            sums[int(mc)] = sums.get(int(mc), 0) + int(num[ok & (m == mc)].sum())
    valid = edges - undefined
    result = StabilityResult(component, None, edges, undefined, total, used, budget if mode == "sampled" else None, seed)
    if valid == 0:
        result.note = "no experiment pairs differ only in this component" if edges == 0 else "no pair has two commonly defined metrics"
        return result
    exact_sum = sum((Fraction(s, comb(mc, 2)) for mc, s in sums.items()), Fraction(0))
    result.ss = float(exact_sum / valid)
    return result


@dataclass
class StabilityReport:
    results: dict[str, StabilityResult]

    @property
    def ss(self) -> dict[str, float | None]:
        return {c: r.ss for c, r in self.results.items()}

    def to_dict(self) -> dict:
        return {c: asdict(r) for c, r in self.results.items()}


def stability_report(
    xs: ExperimentSet,
    components: Sequence[str] = COMPONENTS,
    mode: str = "sampled",
    budget: int = DEFAULT_BUDGET,
    seed: int = 0,
) -> StabilityReport:
    return StabilityReport({c: setup_stability(xs, c, mode, budget, seed) for c in components})


@dataclass
class WinRateTable:
    metrics: tuple[str, ...]
    measures: tuple[str, ...]
    wins: np.ndarray  # (metrics, measures) counts
    ties: np.ndarray  # (measures,)
    void: np.ndarray  # (measures,) experiments with no defined quality
    totals: np.ndarray  # (measures,)
    undefined: np.ndarray = field(default=None)  # (metrics, measures) undefined-quality counts

    @property
    def percent(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return 100.0 * self.wins / self.totals

    @property
    def average(self) -> np.ndarray:
        """Mean of the per-measure win percentages."""
        return np.nanmean(self.percent, axis=1)

    @property
    def tie_percent(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return 100.0 * self.ties / self.totals

    def to_dict(self) -> dict:
        pct = self.percent
        return {
            "measures": list(self.measures),
            "win_percent": {m: dict(zip(self.measures, map(float, pct[i]))) for i, m in enumerate(self.metrics)},
            "average": dict(zip(self.metrics, map(float, self.average))),
            "wins": {m: dict(zip(self.measures, map(int, self.wins[i]))) for i, m in enumerate(self.metrics)},
            "ties": dict(zip(self.measures, map(int, self.ties))),
            "no_defined_metric": dict(zip(self.measures, map(int, self.void))),
            "experiments": dict(zip(self.measures, map(int, self.totals))),
            "undefined_quality": {m: dict(zip(self.measures, map(int, self.undefined[i]))) for i, m in enumerate(self.metrics)},
        }


def win_rate(xs: ExperimentSet) -> WinRateTable:
    """Per measure, how often each metric is strictly better than every other defined metric."""
    q = xs.quality
    defined = ~np.isnan(q)
    any_defined = defined.any(axis=1)
    best = np.max(np.where(defined, q, -np.inf), axis=1)
    at_best = defined & (q == best[:, None])
    n_best = at_best.sum(axis=1)
    unique = any_defined & (n_best == 1)
    tie = any_defined & (n_best > 1)

    n_e = len(xs.measures)
    wins = np.zeros((len(xs.metrics), n_e), dtype=np.int64)
    undefined = np.zeros((len(xs.metrics), n_e), dtype=np.int64)
    for mi in range(len(xs.metrics)):
        wins[mi] = np.bincount(xs.measure[unique & at_best[:, mi]], minlength=n_e)
        undefined[mi] = np.bincount(xs.measure[~defined[:, mi]], minlength=n_e)
    return WinRateTable(
        xs.metrics,
        xs.measures,
        wins,
        np.bincount(xs.measure[tie], minlength=n_e),
        np.bincount(xs.measure[~any_defined], minlength=n_e),
        np.bincount(xs.measure, minlength=n_e),
        undefined,
    )


def format_stability(report: StabilityReport) -> str:
    buf = _io.StringIO()
    buf.write("component,ss,edges,undefined_edges,available_pairs,mode\n")
    for c, r in report.results.items():
        ss = "undefined" if r.ss is None else format_value(r.ss)
        buf.write(f"{c},{ss},{r.edges},{r.undefined_edges},{r.available_pairs},{r.mode}\n")
    return buf.getvalue()


def format_win_rate(table: WinRateTable) -> str:
    buf = _io.StringIO()
    buf.write(",".join(["metric", *table.measures, "avg"]) + "\n")
    pct, avg = table.percent, table.average
    for i, m in enumerate(table.metrics):
        buf.write(",".join([m, *(format_value(v) for v in pct[i]), format_value(avg[i])]) + "\n")
    ties = table.tie_percent
    buf.write(",".join(["(tie)", *(format_value(v) for v in ties), format_value(float(np.nanmean(ties)))]) + "\n")
    return buf.getvalue()


def dumps(report: StabilityReport | None, table: WinRateTable | None) -> str:
    doc = {}
    if report is not None:
        doc["stability"] = report.to_dict()
    if table is not None:
        doc["win_rate"] = table.to_dict()
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
