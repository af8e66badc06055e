"""Experiment enumeration, the per-(source, target) metric cache, and scenario sweeps.

An experiment is a (source pool, target, measure) triple; its outcome is one
quality value per metric. Metrics are computed once per (source, target) cell
and every experiment only gathers from that cache.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from math import comb
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from transtab import io
from transtab.errors import DataError, FormatError, MetricError, ValidationError
from transtab.measures import BATCH
from transtab.metrics import GmmConfig, compute_metric, subsample_indices

log = logging.getLogger(__name__)

OK, DEGENERATE, NOT_APPLICABLE = 0, 1, 2
EXPORT_HEADER = ["experiment_id", "target", "measure", "pool", "metric", "quality"]
UNDEFINED = "undefined"


def worker_count(requested: int | None = None) -> int:
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("TRANSTAB_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def enumerate_pools(n: int, k: int) -> np.ndarray:
    """All ``C(n, k)`` index combinations in lexicographic order, one per row."""
    if not 1 <= k <= n:
        raise ValueError(f"pool size k={k} must satisfy 1 <= k <= n={n}")
    count = comb(n, k)
    flat = np.fromiter((i for c in combinations(range(n), k) for i in c), dtype=np.int32, count=count * k)
    return flat.reshape(count, k)


def expected_experiment_count(n_targets: int, n_candidates: int, k: int, n_measures: int) -> int:
    return n_targets * comb(n_candidates, k) * n_measures


def experiment_id(scenario: str, pool: Iterable[str], target: str, measure: str) -> str:
    key = f"{scenario}|{';'.join(sorted(pool))}|{target}|{measure}"
    return hashlib.sha1(key.encode()).hexdigest()[:16]


def format_value(x: float) -> str:
    return UNDEFINED if np.isnan(x) else f"{x:.6g}"


@dataclass(frozen=True)
class Experiment:
    pool: tuple[str, ...]
    target: str
    measure: str

    def __post_init__(self):
        if len(set(self.pool)) != len(self.pool):
            raise ValidationError(f"pool has repeated sources: {self.pool}")
        if self.target in self.pool:
            raise ValidationError(f"target {self.target!r} cannot be in its own source pool")
        object.__setattr__(self, "pool", tuple(sorted(self.pool)))


@dataclass(frozen=True)
class MetricCache:
    """Metric values and accuracies on the full metric x source x target grid.

    ``values`` has shape (metrics, sources, targets) with NaN where the cell is
    degenerate or not applicable; ``status`` marks which.
    """

    metrics: tuple[str, ...]
    source_ids: tuple[str, ...]
    target_ids: tuple[str, ...]
    values: np.ndarray
    accuracy: np.ndarray
    status: np.ndarray
    evaluations: int = 0
    messages: Mapping[tuple[str, str, str], str] = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.values, self.accuracy, self.status):
            arr.setflags(write=False)

    def value(self, metric: str, source: str, target: str) -> float:
        return float(self.values[self.metrics.index(metric), self.source_ids.index(source), self.target_ids.index(target)])

    def acc(self, source: str, target: str) -> float:
        return float(self.accuracy[self.source_ids.index(source), self.target_ids.index(target)])

    def candidates(self, target: str) -> np.ndarray:
        t = self.target_ids.index(target)
        return np.flatnonzero(self.status[0, :, t] != NOT_APPLICABLE)

    def equals(self, other: "MetricCache") -> bool:
        return (
            self.metrics == other.metrics
            and self.source_ids == other.source_ids
            and self.target_ids == other.target_ids
            and np.array_equal(self.values, other.values, equal_nan=True)
            and np.array_equal(self.accuracy, other.accuracy, equal_nan=True)
            and np.array_equal(self.status, other.status)
        )


def load_pair(manifest: io.ScenarioManifest, src: str, tgt: str):
    paths = manifest.pairs[(src, tgt)]
    where = f"pair ({src}, {tgt})"
    try:
        labels = io.read_labels(paths.labels)
        feats = io.read_matrix(paths.features) if paths.features is not None else None
        preds = io.read_matrix(paths.predictions, kind="predictions") if paths.predictions is not None else None
        for m, name in ((feats, "features"), (preds, "predictions")):
            if m is not None and m.shape[0] != len(labels):
                raise ValidationError(f"{name} have {m.shape[0]} rows but labels have {len(labels)}")
    except (DataError, FormatError, ValidationError) as exc:
        raise DataError(f"{where}: {exc}") from exc
    if manifest.subsample is not None:
        idx = subsample_indices(labels, manifest.subsample, seed=_target_seed(manifest, tgt))
        labels = labels[idx]
        feats = feats[idx] if feats is not None else None
        preds = preds[idx] if preds is not None else None
    return feats, preds, labels


def _target_seed(manifest: io.ScenarioManifest, target: str) -> int:
    # same rows for every source of a target, independent of evaluation order
    digest = hashlib.sha1(f"{manifest.seed}|{target}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def gmm_config(manifest: io.ScenarioManifest) -> GmmConfig:
    return GmmConfig(seed=manifest.seed, **dict(manifest.nleep))


def _cell(args):
    manifest, src, tgt = args
    feats, preds, labels = load_pair(manifest, src, tgt)
    gmm = gmm_config(manifest)
    out = []
    for metric in manifest.metrics:
        try:
            v = compute_metric(metric, labels, features=feats, predictions=preds, gmm=gmm)
            if not np.isfinite(v):
                raise MetricError(f"non-finite value {v}")
            out.append((v, OK, ""))
        except (MetricError, ValidationError, np.linalg.LinAlgError) as exc:
            out.append((np.nan, DEGENERATE, str(exc)))
    return out


def build_cache(manifest: io.ScenarioManifest, workers: int | None = None) -> MetricCache:
    """Compute every (metric, source, target) value exactly once."""
    table = io.read_transfer_table(manifest.transfer_table)
    src_ids, tgt_ids = manifest.source_ids, manifest.target_ids
    shape = (len(manifest.metrics), len(src_ids), len(tgt_ids))
    values = np.full(shape, np.nan)
    status = np.full(shape, NOT_APPLICABLE, dtype=np.int8)
    accuracy = np.full(shape[1:], np.nan)

    cells = [(s, t) for t in tgt_ids for s in src_ids if s != t]
    for s, t in cells:
        if (s, t) not in table:
            raise DataError(f"transfer table has no accuracy for pair ({s}, {t})")
        accuracy[src_ids.index(s), tgt_ids.index(t)] = table[(s, t)]

    n_workers = min(worker_count(workers), max(1, len(cells)))
    jobs = [(manifest, s, t) for s, t in cells]
    if n_workers == 1:
        results = list(map(_cell, jobs))
    else:
        with ProcessPoolExecutor(n_workers) as pool:
            results = list(pool.map(_cell, jobs, chunksize=max(1, len(jobs) // (4 * n_workers))))

    messages = {}
    evaluations = 0
    for (s, t), res in zip(cells, results):
        i, j = src_ids.index(s), tgt_ids.index(t)
        for mi, (v, st, msg) in enumerate(res):
            values[mi, i, j] = v
            status[mi, i, j] = st
            evaluations += 1
            if st == DEGENERATE:
                messages[(manifest.metrics[mi], s, t)] = msg
                log.warning("metric %s degenerate for (%s, %s): %s", manifest.metrics[mi], s, t, msg)
    return MetricCache(manifest.metrics, src_ids, tgt_ids, values, accuracy, status, evaluations, messages)


def write_cache(cache: MetricCache, path) -> None:
    """Cache as CSV; values are written at full precision so reloads are exact."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source_id", "target_id", "accuracy", *cache.metrics])
        for j, t in enumerate(cache.target_ids):
            for i, s in enumerate(cache.source_ids):
                if cache.status[0, i, j] == NOT_APPLICABLE:
                    continue
                vals = [UNDEFINED if np.isnan(v) else repr(float(v)) for v in cache.values[:, i, j]]
                w.writerow([s, t, repr(float(cache.accuracy[i, j])), *vals])


def read_cache(path) -> MetricCache:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read cache {path}: {exc}") from exc
    with fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:3] != ["source_id", "target_id", "accuracy"]:
        raise FormatError(f"{path}: not a metric cache file")
    metrics = tuple(rows[0][3:])
    body = [r for r in rows[1:] if r]
    src_ids = tuple(sorted({r[0] for r in body}))
    tgt_ids = tuple(sorted({r[1] for r in body}))
    values = np.full((len(metrics), len(src_ids), len(tgt_ids)), np.nan)
    status = np.full(values.shape, NOT_APPLICABLE, dtype=np.int8)
    accuracy = np.full(values.shape[1:], np.nan)
    for r in body:
        i, j = src_ids.index(r[0]), tgt_ids.index(r[1])
        accuracy[i, j] = float(r[2])
        for mi, v in enumerate(r[3:]):
            if v == UNDEFINED:
                status[mi, i, j] = DEGENERATE
            else:
                values[mi, i, j] = float(v)
                status[mi, i, j] = OK
    return MetricCache(metrics, src_ids, tgt_ids, values, accuracy, status, 0)


def run_experiment(xp: Experiment, cache: MetricCache) -> dict[str, float]:
    """Outcome of one experiment: metric -> quality (NaN when undefined)."""
    si = [cache.source_ids.index(s) for s in xp.pool]
    t = cache.target_ids.index(xp.target)
    if np.any(cache.status[0, si, t] == NOT_APPLICABLE):
        raise ValidationError(f"cache does not cover pool {xp.pool} for target {xp.target}")
    fn = BATCH[xp.measure]
    a = cache.accuracy[si, t]
    return {m: float(fn(cache.values[mi, si, t], a)) for mi, m in enumerate(cache.metrics)}


@dataclass
class ExperimentSet:
    """Columnar experiment table: one row per experiment, one quality column per metric."""

    scenario: str
    metrics: tuple[str, ...]
    target_ids: tuple[str, ...]
    measures: tuple[str, ...]
    pool_ids: tuple[str, ...]  # ';'-joined sorted source ids
    pool: np.ndarray
    target: np.ndarray
    measure: np.ndarray
    quality: np.ndarray
    metric_evaluations: int = 0

    def __len__(self) -> int:
        return len(self.target)

    def counts(self) -> dict[str, dict[str, int]]:
        return {
            "target": {t: int(c) for t, c in zip(self.target_ids, np.bincount(self.target, minlength=len(self.target_ids)))},
            "measure": {m: int(c) for m, c in zip(self.measures, np.bincount(self.measure, minlength=len(self.measures)))},
            "distinct_pools": len(np.unique(self.pool)),
        }

    def keys(self) -> dict[str, np.ndarray]:
        return {"source_pool": self.pool, "target": self.target, "measure": self.measure}

    def experiment(self, i: int) -> Experiment:
        return Experiment(tuple(self.pool_ids[self.pool[i]].split(";")), self.target_ids[self.target[i]], self.measures[self.measure[i]])

    def outcome(self, i: int) -> dict[str, float]:
        return dict(zip(self.metrics, map(float, self.quality[i])))

    def subset(self, rows) -> "ExperimentSet":
        rows = np.asarray(rows)
        return ExperimentSet(
            self.scenario, self.metrics, self.target_ids, self.measures, self.pool_ids,
            self.pool[rows], self.target[rows], self.measure[rows], self.quality[rows], self.metric_evaluations,
        )

    def drop_metric(self, metric: str) -> "ExperimentSet":
        keep = [i for i, m in enumerate(self.metrics) if m != metric]
        return ExperimentSet(
            self.scenario, tuple(self.metrics[i] for i in keep), self.target_ids, self.measures, self.pool_ids,
            self.pool, self.target, self.measure, self.quality[:, keep], self.metric_evaluations,
        )

    @classmethod
    def from_records(cls, scenario: str, metrics: Sequence[str], records) -> "ExperimentSet":
        """Build from ``(Experiment, outcome-dict)`` pairs, preserving record order."""
        records = list(records)
        targets = sorted({xp.target for xp, _ in records})
        measures = sorted({xp.measure for xp, _ in records})
        pools = sorted({";".join(xp.pool) for xp, _ in records})
        pidx = {p: i for i, p in enumerate(pools)}
        return cls(
            scenario,
            tuple(metrics),
            tuple(targets),
            tuple(measures),
            tuple(pools),
            np.array([pidx[";".join(xp.pool)] for xp, _ in records], dtype=np.int64),
            np.array([targets.index(xp.target) for xp, _ in records], dtype=np.int64),
            np.array([measures.index(xp.measure) for xp, _ in records], dtype=np.int64),
            np.array([[o.get(m, np.nan) for m in metrics] for _, o in records], dtype=np.float64).reshape(len(records), len(metrics)),
        )


def _target_block(cache: MetricCache, t: int, k: int, measures: Sequence[str]):
    cand = np.flatnonzero(cache.status[0, :, t] != NOT_APPLICABLE)
    pools = cand[enumerate_pools(len(cand), k)]
    a = cache.accuracy[pools, t]
    quality = np.empty((len(measures), len(pools), len(cache.metrics)))
    for ei, e in enumerate(measures):
        fn = BATCH[e]
        for mi in range(len(cache.metrics)):
            quality[ei, :, mi] = fn(cache.values[mi][pools, t], a)
    return pools, quality


def evaluate_cache(cache: MetricCache, pool_size: int, measures: Sequence[str] = io.MEASURES, scenario: str = "scenario") -> ExperimentSet:
    """Evaluate every (pool, target, measure) experiment against a cache.

    Row order: target, then measure (in the given order), then pools lexicographically.
    """
    blocks = []
    for t in range(len(cache.target_ids)):
        n_cand = int(np.sum(cache.status[0, :, t] != NOT_APPLICABLE))
        if pool_size > n_cand:
            raise ValidationError(f"pool size {pool_size} exceeds {n_cand} candidates for target {cache.target_ids[t]!r}")
        blocks.append(_target_block(cache, t, pool_size, measures))

    all_pools = np.concatenate([p for p, _ in blocks])
    uniq, inverse = np.unique(all_pools, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    pool_ids = tuple(";".join(cache.source_ids[i] for i in row) for row in uniq)

    pool_col, target_col, measure_col, quals = [], [], [], []
    offset = 0
    for t, (pools, quality) in enumerate(blocks):
        keys = inverse[offset : offset + len(pools)]
        offset += len(pools)
        for ei in range(len(measures)):
            pool_col.append(keys)
            target_col.append(np.full(len(pools), t))
            measure_col.append(np.full(len(pools), ei))
            quals.append(quality[ei])
    return ExperimentSet(
        scenario,
        cache.metrics,
        cache.target_ids,
        tuple(measures),
        pool_ids,
        np.concatenate(pool_col),
        np.concatenate(target_col),
        np.concatenate(measure_col),
        np.concatenate(quals),
        cache.evaluations,
    )


def run_scenario(manifest: io.ScenarioManifest, workers: int | None = None, cache: MetricCache | None = None) -> ExperimentSet:
    cache = cache if cache is not None else build_cache(manifest, workers)
    return evaluate_cache(cache, manifest.pool_size, manifest.measures, manifest.scenario_name)


def _export_chunk(args) -> str:
    scenario, metrics, target, measure, pool_strs, quality = args
    lines = []
    for pool, row in zip(pool_strs, quality):
        xid = hashlib.sha1(f"{scenario}|{pool}|{target}|{measure}".encode()).hexdigest()[:16]
        prefix = f"{xid},{target},{measure},{pool},"
        lines.extend(f"{prefix}{m},{format_value(q)}\n" for m, q in zip(metrics, row))
    return "".join(lines)


def _chunks(xs: ExperimentSet):
    # contiguous (target, measure) runs in row order
    key = xs.target * len(xs.measures) + xs.measure
    bounds = np.flatnonzero(np.diff(key)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [len(key)]])
    for s, e in zip(starts, ends):
        yield (
            xs.scenario,
            xs.metrics,
            xs.target_ids[xs.target[s]],
            xs.measures[xs.measure[s]],
            [xs.pool_ids[p] for p in xs.pool[s:e]],
            xs.quality[s:e],
        )


def write_export(xs: ExperimentSet, path, workers: int | None = None) -> None:
    """Long-format CSV, one row per (experiment, metric), in experiment-set row order."""
    n_workers = worker_count(workers)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(EXPORT_HEADER) + "\n")
        if len(xs) == 0:
            return
        if n_workers == 1:
            for chunk in _chunks(xs):
                fh.write(_export_chunk(chunk))
        else:
            with ProcessPoolExecutor(n_workers) as pool:
                for text in pool.map(_export_chunk, _chunks(xs)):
                    fh.write(text)


def read_export(path, scenario: str | None = None) -> ExperimentSet:
    import pandas as pd

    try:
        df = pd.read_csv(path, dtype={"experiment_id": str, "target": str, "measure": str, "pool": str, "metric": str, "quality": str}, keep_default_na=False)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read experiment export {path}: {exc}") from exc
    if list(df.columns) != EXPORT_HEADER:
        raise FormatError(f"{path}: header must be {','.join(EXPORT_HEADER)}")
    metrics = tuple(pd.unique(df["metric"]))
    metric_order = {m: i for i, m in enumerate(metrics)}
    exp_codes, exp_uniques = pd.factorize(df["experiment_id"], sort=False)
    q = pd.to_numeric(df["quality"].replace(UNDEFINED, "nan"), errors="coerce").to_numpy(dtype=np.float64)
    quality = np.full((len(exp_uniques), len(metrics)), np.nan)
    quality[exp_codes, df["metric"].map(metric_order).to_numpy()] = q

    first = pd.Series(np.arange(len(df))).groupby(exp_codes).first().to_numpy()
    heads = df.iloc[first]
    tgt_codes, tgt_uniques = pd.factorize(heads["target"], sort=True)
    present = set(heads["measure"])
    measures = tuple(m for m in io.MEASURES if m in present) + tuple(sorted(present - set(io.MEASURES)))
    meas_codes = heads["measure"].map({m: i for i, m in enumerate(measures)}).to_numpy()
    pool_canon = heads["pool"].map(lambda p: ";".join(sorted(p.split(";"))))
    pool_codes, pool_uniques = pd.factorize(pool_canon, sort=True)
    return ExperimentSet(
        scenario or "export",
        metrics,
        tuple(tgt_uniques),
        measures,
        tuple(pool_uniques),
        pool_codes.astype(np.int64),
        tgt_codes.astype(np.int64),
        meas_codes.astype(np.int64),
        quality,
    )


def summarize(xs: ExperimentSet, pool_size: int | None = None, n_candidates: Mapping[str, int] | None = None) -> dict:
    undefined = {m: int(np.isnan(xs.quality[:, i]).sum()) for i, m in enumerate(xs.metrics)}
    summary = {
        "scenario": xs.scenario,
        "experiments": len(xs),
        "metrics": list(xs.metrics),
        "measures": list(xs.measures),
        "targets": list(xs.target_ids),
        "counts": xs.counts(),
        "undefined_quality": undefined,
        "metric_evaluations": xs.metric_evaluations,
    }
    if pool_size is not None and n_candidates is not None:
        summary["pool_size"] = pool_size
        summary["closed_form_count"] = sum(comb(n, pool_size) for n in n_candidates.values()) * len(xs.measures)
    return summary


def write_summary(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
