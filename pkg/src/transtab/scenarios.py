"""Synthetic scenarios with a planted transfer order, and target-pool construction.

The synthetic generator is an ordering oracle: every (source, target) cell
gets a latent separation that drives both the class geometry of the features
and the transfer accuracy, so metrics that respond to class separation should
rank sources the same way accuracy does.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml

from transtab import io
from transtab.errors import ManifestError, MetricError, ValidationError
from transtab.measures import BATCH
from transtab.metrics import GmmConfig, compute_metric

LINKS = ("tanh", "linear")


@dataclass(frozen=True)
class SyntheticSpec:
    n_sources: int = 6
    n_targets: int = 4
    shared: bool = False  # datasets act as both sources and targets (self-pairs excluded)
    n_classes: int = 4
    samples_per_class: int = 15
    dim: int = 6
    feature_offset: float = 2.0  # constant shift, so a bias-free linear fit can model class indicators
    separation_range: tuple[float, float] = (0.25, 3.0)
    separation: tuple[tuple[float, ...], ...] | None = None  # explicit (sources x targets) override
    sigma: float = 0.0
    link: str = "tanh"
    pool_size: int = 3
    metrics: tuple[str, ...] = io.DEFAULT_METRICS
    measures: tuple[str, ...] = io.MEASURES
    scenario_name: str = "synthetic"
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.separation_range
        if lo < 0 or hi < lo:
            raise ValidationError(f"separation_range must satisfy 0 <= low <= high, got {self.separation_range}")
        if self.sigma < 0:
            raise ValidationError("sigma must be non-negative")
        if self.link not in LINKS:
            raise ValidationError(f"link must be one of {LINKS}")
        if self.n_classes < 2 or self.samples_per_class < 2 or self.dim < 1:
            raise ValidationError("need n_classes >= 2, samples_per_class >= 2, dim >= 1")
        if self.separation is not None:
            sep = np.asarray(self.separation, dtype=float)
            if sep.shape != (self.n_sources, self.n_targets) or np.any(sep < 0):
                raise ValidationError("separation must be a non-negative n_sources x n_targets matrix")

    @property
    def source_ids(self) -> tuple[str, ...]:
        width = len(str(max(self.n_sources, self.n_targets) - 1))
        return tuple(f"d{i:0{width}d}" if self.shared else f"s{i:0{width}d}" for i in range(self.n_sources))

    @property
    def target_ids(self) -> tuple[str, ...]:
        if self.shared:
            return self.source_ids[: self.n_targets]
        width = len(str(max(self.n_sources, self.n_targets) - 1))
        return tuple(f"t{i:0{width}d}" for i in range(self.n_targets))

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ManifestError(f"unknown synthetic spec fields: {sorted(unknown)}")
        doc = dict(doc)
        for key in ("separation_range", "metrics", "measures"):
            if key in doc:
                doc[key] = tuple(doc[key])
        sep = doc.get("separation")
        if isinstance(sep, (int, float)):
            shape = (doc.get("n_sources", cls.n_sources), doc.get("n_targets", cls.n_targets))
            sep = np.full(shape, float(sep))
        if sep is not None:
            doc["separation"] = tuple(tuple(float(v) for v in row) for row in sep)
        return cls(**doc)


def separation_matrix(spec: SyntheticSpec) -> np.ndarray:
    if spec.separation is not None:
        return np.asarray(spec.separation, dtype=np.float64)
    rng = np.random.default_rng([spec.seed, 1])
    lo, hi = spec.separation_range
    return rng.uniform(lo, hi, size=(spec.n_sources, spec.n_targets))


def accuracy_link(sep, spec: SyntheticSpec, noise) -> np.ndarray:
    if spec.link == "tanh":
        base = 0.5 + 0.45 * np.tanh(sep)
    else:
        lo, hi = spec.separation_range
        base = 0.05 + 0.9 * (np.asarray(sep) - lo) / max(hi - lo, 1e-12)
    return np.clip(base + spec.sigma * noise, 0.0, 1.0)


def _target_base(spec: SyntheticSpec, t: int):
    """Class directions and per-class standardized noise shared by all sources of a target."""
    rng = np.random.default_rng([spec.seed, 2, t])
    directions = rng.normal(size=(spec.n_classes, spec.dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    labels = np.repeat(np.arange(spec.n_classes), spec.samples_per_class)
    noise = rng.normal(size=(len(labels), spec.dim))
    for c in range(spec.n_classes):
        block = noise[labels == c]
        noise[labels == c] = (block - block.mean(axis=0)) / block.std(axis=0)
    return directions, labels, noise


def synthetic_cell(spec: SyntheticSpec, sep: float, t: int):
    """Features, predictions and labels for one (source, target) cell."""
    directions, labels, noise = _target_base(spec, t)
    anchors = sep * directions
    centered = anchors[labels] + noise
    logits = -0.5 * np.sum((centered[:, None, :] - anchors[None]) ** 2, axis=2)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    # float32 storage must still pass the row-sum check
    p = p.astype(np.float32)
    p /= p.sum(axis=1, keepdims=True, dtype=np.float64).astype(np.float32)
    return (centered + spec.feature_offset).astype(np.float32), p, labels


@dataclass
class GeneratedScenario:
    manifest_path: Path
    separation: np.ndarray
    accuracy: np.ndarray
    spec: SyntheticSpec


def generate_synthetic_scenario(spec: SyntheticSpec, out_dir) -> GeneratedScenario:
    """Write data files, a transfer table and a manifest loadable by ``io.load_manifest``."""
    out = Path(out_dir)
    for sub in ("features", "predictions", "labels"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    src_ids, tgt_ids = spec.source_ids, spec.target_ids
    sep = separation_matrix(spec)
    noise = np.random.default_rng([spec.seed, 3]).normal(size=sep.shape)
    acc = accuracy_link(sep, spec, noise)

    table, pairs = {}, []
    for t, tgt in enumerate(tgt_ids):
        label_path = f"labels/{tgt}.txt"
        for s, src in enumerate(src_ids):
            if src == tgt:
                continue
            feats, preds, labels = synthetic_cell(spec, float(sep[s, t]), t)
            io.write_matrix(feats, out / f"features/{src}__{tgt}.tmx")
            io.write_matrix(preds, out / f"predictions/{src}__{tgt}.tmx")
            io.write_labels(labels, out / label_path)
            table[(src, tgt)] = float(acc[s, t])
            pairs.append(
                {
                    "source": src,
                    "target": tgt,
                    "features": f"features/{src}__{tgt}.tmx",
                    "predictions": f"predictions/{src}__{tgt}.tmx",
                    "labels": label_path,
                }
            )
    io.write_transfer_table(table, out / "accuracies.csv")
    with open(out / "separation.csv", "w") as fh:
        fh.write("source_id,target_id,separation\n")
        for t, tgt in enumerate(tgt_ids):
            for s, src in enumerate(src_ids):
                if src != tgt:
                    fh.write(f"{src},{tgt},{sep[s, t]!r}\n")
    doc = {
        "scenario_name": spec.scenario_name,
        "seed": spec.seed,
        "pool_size": spec.pool_size,
        "source_ids": list(src_ids),
        "target_ids": list(tgt_ids),
        "measures": list(spec.measures),
        "metrics": list(spec.metrics),
        "transfer_table": "accuracies.csv",
        "pairs": pairs,
    }
    manifest_path = out / "manifest.yaml"
    with open(manifest_path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
    return GeneratedScenario(manifest_path, sep, acc, spec)


@dataclass(frozen=True)
class TargetPoolSpec:
    strategy: str = "uniform_fraction"  # or "fixed_fraction"
    min_fraction: float = 0.02
    max_fraction: float = 1.0
    fraction: float = 0.5
    pool_size: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("uniform_fraction", "fixed_fraction"):
            raise ValidationError(f"unknown strategy {self.strategy!r}")
        for f in (self.min_fraction, self.max_fraction, self.fraction):
            if not 0 < f <= 1:
                raise ValidationError(f"fractions must lie in (0, 1], got {f}")
        if self.min_fraction > self.max_fraction:
            raise ValidationError("min_fraction exceeds max_fraction")
        if self.pool_size < 2:
            raise ValidationError("pool_size must be at least 2")

    def subset_sizes(self, n_classes: int) -> tuple[int, int]:
        if self.strategy == "fixed_fraction":
            k = int(round(self.fraction * n_classes))
            return k, k
        return int(np.ceil(self.min_fraction * n_classes - 1e-9)), int(np.floor(self.max_fraction * n_classes + 1e-9))


def sample_target_pool(spec: TargetPoolSpec, labels) -> list[np.ndarray]:
    """Class subsets, one per pool member; members may repeat, classes within one never do."""
    classes = np.unique(io.check_labels(labels))
    if len(classes) < 2:
        raise ValidationError("target pool needs at least 2 classes")
    lo, hi = spec.subset_sizes(len(classes))
    if hi < 1 or lo < 1:
        raise ValidationError(f"requested subset size is 0 for {len(classes)} classes")
    rng = np.random.default_rng(spec.seed)
    pool = []
    for _ in range(spec.pool_size):
        k = int(rng.integers(lo, hi + 1))
        pool.append(np.sort(rng.choice(classes, size=k, replace=False)))
    return pool


def class_count_accuracy(subsets: Sequence[np.ndarray], n_classes: int, noise: float = 0.0, seed: int = 0) -> np.ndarray:
    """Synthetic per-subset accuracies increasing in the subset's class count."""
    counts = np.array([len(s) for s in subsets], dtype=np.float64)
    jitter = np.random.default_rng([seed, 7]).normal(size=len(counts))
    return np.clip(0.3 + 0.6 * counts / n_classes + noise * jitter, 0.0, 1.0)


@dataclass
class TargetSelectionResult:
    subsets: list[np.ndarray]
    metrics: tuple[str, ...]
    values: np.ndarray  # (pool_size, metrics); NaN where the metric failed
    accuracies: np.ndarray
    measure: str
    quality: dict[str, float] = field(default_factory=dict)  # NaN = undefined


def run_target_selection(
    spec: TargetPoolSpec,
    labels,
    metrics: Sequence[str],
    measure: str,
    accuracies: Sequence[float] | Callable[[list[np.ndarray]], Sequence[float]],
    features=None,
    predictions=None,
    gmm: GmmConfig | None = None,
) -> TargetSelectionResult:
    """Rank class-subsampled target datasets for one fixed source model.

    A metric whose values are identical across the whole pool cannot rank it and
    is reported undefined.
    """
    labels = io.check_labels(labels)
    subsets = sample_target_pool(spec, labels)
    acc = np.asarray(accuracies(subsets) if callable(accuracies) else accuracies, dtype=np.float64)
    if acc.shape != (len(subsets),):
        raise ValidationError(f"expected {len(subsets)} accuracies, got {acc.shape}")
    feats = None if features is None else np.asarray(features)
    preds = None if predictions is None else np.asarray(predictions)

    values = np.full((len(subsets), len(metrics)), np.nan)
    for i, subset in enumerate(subsets):
        mask = np.isin(labels, subset)
        for mi, metric in enumerate(metrics):
            try:
                values[i, mi] = compute_metric(
                    metric,
                    labels[mask],
                    features=None if feats is None else feats[mask],
                    predictions=None if preds is None else preds[mask],
                    gmm=gmm,
                )
            except (MetricError, ValidationError):
                pass
    fn = BATCH[measure]
    quality = {}
    for mi, metric in enumerate(metrics):
        v = values[:, mi]
        quality[metric] = float("nan") if np.ptp(v) == 0 else float(fn(v, acc))
    return TargetSelectionResult(subsets, tuple(metrics), values, acc, measure, quality)


def spec_to_dict(spec) -> dict:
    d = asdict(spec)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
