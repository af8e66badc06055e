"""On-disk formats: binary matrices, label files, transfer tables and scenario manifests.

Matrix files are a 16-byte header (magic ``TMX1``, then little-endian uint32
version, rows, cols) followed by row-major little-endian float32 values.
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import yaml

from transtab.errors import DataError, FormatError, ManifestError, ValidationError

MAGIC = b"TMX1"
VERSION = 1
HEADER = struct.Struct("<4sIII")
ROW_SUM_TOL = 1e-5

MEASURES = ("pearson", "kendall", "weighted_kendall", "rel_at_1")
METRICS = ("leep", "nleep", "logme", "gbc", "hscore", "numc")
# numc is a baseline for the target-pool scenario, not a default source-selection metric
DEFAULT_METRICS = ("leep", "nleep", "logme", "gbc", "hscore")
EMBEDDING_METRICS = frozenset({"nleep", "logme", "gbc", "hscore"})


def matrix_nbytes(rows: int, cols: int) -> int:
    """File size in bytes of a ``rows x cols`` matrix file."""
    return HEADER.size + 4 * rows * cols


def check_features(x, name: str = "features") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValidationError(f"{name}: expected a 2-D matrix, got shape {x.shape}")
    if x.shape[0] < 1 or x.shape[1] < 1:
        raise ValidationError(f"{name}: matrix must have at least one row and column, got {x.shape}")
    if not np.all(np.isfinite(x)):
        bad = int(np.argwhere(~np.isfinite(x))[0, 0])
        raise ValidationError(f"{name}: non-finite value in row {bad}")
    return x


def check_predictions(p, name: str = "predictions") -> np.ndarray:
    p = check_features(p, name)
    if np.any(p < 0) or np.any(p > 1):
        bad = int(np.argwhere((p < 0) | (p > 1))[0, 0])
        raise ValidationError(f"{name}: row {bad} has entries outside [0, 1]")
    sums = p.sum(axis=1, dtype=np.float64)
    off = np.abs(sums - 1.0) > ROW_SUM_TOL
    if np.any(off):
        bad = int(np.flatnonzero(off)[0])
        raise ValidationError(f"{name}: row {bad} sums to {sums[bad]:.6g}, expected 1")
    return p


def check_labels(y, n: int | None = None, name: str = "labels") -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValidationError(f"{name}: expected a 1-D vector, got shape {y.shape}")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValidationError(f"{name}: class ids must be integers")
        y = y.astype(np.int64)
    if np.any(y < 0):
        raise ValidationError(f"{name}: negative class id at index {int(np.flatnonzero(y < 0)[0])}")
    if n is not None and y.shape[0] != n:
        raise ValidationError(f"{name}: length {y.shape[0]} does not match {n} matrix rows")
    return y.astype(np.int64, copy=False)


def write_matrix(m, path) -> None:
    m = check_features(np.asarray(m), str(path))
    data = np.ascontiguousarray(m, dtype="<f4")
    if not np.all(np.isfinite(data)):
        raise ValidationError(f"{path}: values overflow float32")
    rows, cols = data.shape
    try:
        with open(path, "wb") as fh:
            fh.write(HEADER.pack(MAGIC, VERSION, rows, cols))
            fh.write(data.tobytes(order="C"))
    except OSError as exc:
        raise DataError(f"cannot write matrix to {path}: {exc}") from exc


def read_matrix(path, kind: str = "features") -> np.ndarray:
    """Read a matrix file; ``kind="predictions"`` additionally checks row-stochasticity."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read matrix {path}: {exc}") from exc
    if len(raw) < HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, rows, cols = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = matrix_nbytes(rows, cols)
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {rows}x{cols}, found {len(raw)}")
    m = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(rows, cols)
    if kind == "predictions":
        return check_predictions(m, str(path))
    if kind != "features":
        raise ValueError(f"unknown matrix kind {kind!r}")
    return check_features(m, str(path))


def write_labels(y, path) -> None:
    y = check_labels(y)
    with open(path, "w") as fh:
        fh.writelines(f"{int(v)}\n" for v in y)


def read_labels(path) -> np.ndarray:
    try:
        with open(path) as fh:
            lines = [ln.strip() for ln in fh]
    except OSError as exc:
        raise DataError(f"cannot read labels {path}: {exc}") from exc
    out = []
    for i, ln in enumerate(lines):
        if not ln:
            continue
        try:
            out.append(int(ln))
        except ValueError:
            raise FormatError(f"{path}: line {i + 1} is not an integer: {ln!r}") from None
    if not out:
        raise ValidationError(f"{path}: no labels")
    return check_labels(np.array(out, dtype=np.int64), name=str(path))


def read_transfer_table(path) -> dict[tuple[str, str], float]:
    table: dict[tuple[str, str], float] = {}
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read transfer table {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["source_id", "target_id", "accuracy"]:
            raise FormatError(f"{path}: header must be source_id,target_id,accuracy")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"{path}: line {lineno} has {len(row)} fields")
            src, tgt, acc = (c.strip() for c in row)
            try:
                a = float(acc)
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: accuracy {acc!r} is not a number") from None
            if not (0.0 <= a <= 1.0):
                raise ValidationError(
                    f"{path}: line {lineno}: accuracy {a} outside [0, 1] (percent values are rejected)"
                )
            if (src, tgt) in table:
                raise ValidationError(f"{path}: line {lineno}: duplicate pair ({src}, {tgt})")
            table[(src, tgt)] = a
    return table


def write_transfer_table(table: Mapping[tuple[str, str], float], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source_id", "target_id", "accuracy"])
        for (src, tgt), acc in sorted(table.items()):
            if not (0.0 <= acc <= 1.0):
                raise ValidationError(f"accuracy for ({src}, {tgt}) outside [0, 1]: {acc}")
            w.writerow([src, tgt, repr(float(acc))])


@dataclass(frozen=True)
class PairPaths:
    features: Path | None
    predictions: Path | None
    labels: Path


@dataclass(frozen=True)
class ScenarioManifest:
    scenario_name: str
    source_ids: tuple[str, ...]
    target_ids: tuple[str, ...]
    pool_size: int
    transfer_table: Path
    pairs: Mapping[tuple[str, str], PairPaths]
    measures: tuple[str, ...] = MEASURES
    metrics: tuple[str, ...] = DEFAULT_METRICS
    seed: int = 0
    subsample: int | None = None
    nleep: Mapping[str, object] = field(default_factory=dict)
    root: Path = Path(".")

    def candidates(self, target: str) -> tuple[str, ...]:
        """Sources eligible for ``target``: every source except the target itself."""
        return tuple(s for s in self.source_ids if s != target)

    def to_dict(self) -> dict:
        def rel(p):
            return None if p is None else os.path.relpath(p, self.root)

        d = {
            "scenario_name": self.scenario_name,
            "seed": self.seed,
            "pool_size": self.pool_size,
            "source_ids": list(self.source_ids),
            "target_ids": list(self.target_ids),
            "measures": list(self.measures),
            "metrics": list(self.metrics),
            "transfer_table": rel(self.transfer_table),
            "pairs": [],
        }
        if self.subsample is not None:
            d["subsample"] = {"n_keep": self.subsample}
        if self.nleep:
            d["nleep"] = dict(self.nleep)
        for (src, tgt), pp in sorted(self.pairs.items()):
            entry = {"source": src, "target": tgt, "labels": rel(pp.labels)}
            if pp.features is not None:
                entry["features"] = rel(pp.features)
            if pp.predictions is not None:
                entry["predictions"] = rel(pp.predictions)
            d["pairs"].append(entry)
        return d


def _ordered_subset(values, allowed: tuple[str, ...], what: str) -> tuple[str, ...]:
    if not isinstance(values, list) or not values:
        raise ManifestError(f"{what}: expected a non-empty list")
    unknown = [v for v in values if v not in allowed]
    if unknown:
        raise ManifestError(f"{what}: unknown entries {unknown}; allowed {list(allowed)}")
    if len(set(values)) != len(values):
        raise ManifestError(f"{what}: duplicate entries")
    return tuple(v for v in allowed if v in values)


def _id_list(doc: dict, key: str) -> tuple[str, ...]:
    ids = doc.get(key)
    if not isinstance(ids, list) or not ids:
        raise ManifestError(f"{key}: expected a non-empty list of ids")
    ids = [str(i) for i in ids]
    if len(set(ids)) != len(ids):
        raise ManifestError(f"{key}: duplicate ids")
    bad = [i for i in ids if any(c in i for c in ",;\n")]
    if bad:
        raise ManifestError(f"{key}: ids may not contain ',' or ';': {bad}")
    return tuple(sorted(ids))


def parse_manifest(doc: dict, root: Path) -> ScenarioManifest:
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a mapping")
    for key in ("scenario_name", "source_ids", "target_ids", "pool_size", "transfer_table", "pairs"):
        if key not in doc:
            raise ManifestError(f"missing required field {key!r}")
    sources = _id_list(doc, "source_ids")
    targets = _id_list(doc, "target_ids")
    k = doc["pool_size"]
    if not isinstance(k, int) or isinstance(k, bool) or k < 1:
        raise ManifestError(f"pool_size: expected a positive integer, got {k!r}")
    measures = _ordered_subset(doc.get("measures", list(MEASURES)), MEASURES, "measures")
    metrics = _ordered_subset(doc.get("metrics", list(DEFAULT_METRICS)), METRICS, "metrics")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ManifestError(f"seed: expected an integer, got {seed!r}")

    for tgt in targets:
        n_cand = sum(1 for s in sources if s != tgt)
        if k > n_cand:
            raise ManifestError(f"pool_size: k={k} exceeds the {n_cand} candidate sources for target {tgt!r}")

    subsample = None
    if doc.get("subsample") is not None:
        sub = doc["subsample"]
        n_keep = sub.get("n_keep") if isinstance(sub, dict) else None
        if not isinstance(n_keep, int) or n_keep < 1:
            raise ManifestError("subsample.n_keep: expected a positive integer")
        subsample = n_keep

    nleep = doc.get("nleep") or {}
    if not isinstance(nleep, dict):
        raise ManifestError("nleep: expected a mapping")

    need_feats = bool(EMBEDDING_METRICS.intersection(metrics))
    need_preds = "leep" in metrics
    entries = doc["pairs"]
    if not isinstance(entries, list):
        raise ManifestError("pairs: expected a list")
    pairs: dict[tuple[str, str], PairPaths] = {}
    for i, entry in enumerate(entries):
        where = f"pairs[{i}]"
        if not isinstance(entry, dict):
            raise ManifestError(f"{where}: expected a mapping")
        src, tgt = str(entry.get("source")), str(entry.get("target"))
        if src not in sources:
            raise ManifestError(f"{where}.source: unknown source id {src!r}")
        if tgt not in targets:
            raise ManifestError(f"{where}.target: unknown target id {tgt!r}")
        if src == tgt:
            raise ManifestError(f"{where}: source and target are the same dataset {src!r}")
        if (src, tgt) in pairs:
            raise ManifestError(f"{where}: pair ({src}, {tgt}) declared more than once")
        paths = {}
        for key, needed in (("features", need_feats), ("predictions", need_preds), ("labels", True)):
            val = entry.get(key)
            if val is None:
                if needed:
                    raise ManifestError(f"{where}.{key}: missing data path for pair ({src}, {tgt})")
                paths[key] = None
            else:
                paths[key] = (root / str(val)).resolve()
        pairs[(src, tgt)] = PairPaths(**paths)

    for tgt in targets:
        for src in sources:
            if src != tgt and (src, tgt) not in pairs:
                raise ManifestError(f"pairs: missing data paths for pair ({src}, {tgt})")

    return ScenarioManifest(
        scenario_name=str(doc["scenario_name"]),
        source_ids=sources,
        target_ids=targets,
        pool_size=k,
        transfer_table=(root / str(doc["transfer_table"])).resolve(),
        pairs=dict(sorted(pairs.items())),
        measures=measures,
        metrics=metrics,
        seed=seed,
        subsample=subsample,
        nleep=dict(sorted(nleep.items())),
        root=root.resolve(),
    )


def load_manifest(path) -> ScenarioManifest:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ManifestError(f"{path}: not a valid manifest document: {exc}") from exc
    return parse_manifest(doc, path.parent)


def dump_manifest(manifest: ScenarioManifest, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(manifest.to_dict(), fh, sort_keys=False)
