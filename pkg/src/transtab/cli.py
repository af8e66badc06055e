"""Command-line front end.

Exit codes: 0 success, 1 usage, 2 manifest error, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np
import yaml

from transtab import engine, io, stability
from transtab.errors import DataError, FormatError, ManifestError, MetricError, ValidationError
from transtab.metrics import compute_metric
from transtab.metrics.gmm import GmmConfig
from transtab.scenarios import (
    SyntheticSpec,
    TargetPoolSpec,
    class_count_accuracy,
    generate_synthetic_scenario,
    run_target_selection,
    sample_target_pool,
)

EXIT_USAGE, EXIT_MANIFEST, EXIT_DATA, EXIT_INTERNAL = 1, 2, 3, 4
log = logging.getLogger("transtab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _names(text: str | None, allowed: tuple[str, ...], what: str) -> tuple[str, ...] | None:
    if text is None:
        return None
    names = [t.strip() for t in text.split(",") if t.strip()]
    bad = [n for n in names if n not in allowed]
    if bad or not names:
        raise UsageError(f"--{what}: unknown or empty entries {bad}; allowed {','.join(allowed)}")
    return tuple(n for n in allowed if n in names)


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    return out


def cmd_metrics(args) -> int:
    manifest = io.load_manifest(args.manifest)
    metrics = _names(args.metrics, io.METRICS, "metrics") or manifest.metrics
    if (args.source, args.target) not in manifest.pairs:
        raise ManifestError(f"manifest declares no pair ({args.source}, {args.target})")
    feats, preds, labels = engine.load_pair(manifest, args.source, args.target)
    gmm = engine.gmm_config(manifest)
    lines = ["metric,value"]
    for m in metrics:
        try:
            if m == "leep" and preds is None:
                raise ManifestError(f"pairs: no predictions path for ({args.source}, {args.target})")
            if m in io.EMBEDDING_METRICS and feats is None:
                raise ManifestError(f"pairs: no features path for ({args.source}, {args.target})")
            v = engine.format_value(compute_metric(m, labels, features=feats, predictions=preds, gmm=gmm))
        except (MetricError, ValidationError) as exc:
            log.warning("%s undefined for (%s, %s): %s", m, args.source, args.target, exc)
            v = engine.UNDEFINED
        lines.append(f"{m},{v}")
    text = "\n".join(lines) + "\n"
    if args.out:
        (_out_dir(args.out) / f"metrics_{args.source}__{args.target}.csv").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_scenario(args) -> int:
    manifest = io.load_manifest(args.manifest)
    measures = _names(args.measures, io.MEASURES, "measures") or manifest.measures
    out = _out_dir(args.out)
    if args.cache:
        cache = engine.read_cache(args.cache)
        if args.metrics:
            keep = _names(args.metrics, cache.metrics, "metrics")
            idx = [cache.metrics.index(m) for m in keep]
            cache = engine.MetricCache(keep, cache.source_ids, cache.target_ids, cache.values[idx], cache.accuracy, cache.status[idx])
    else:
        if args.metrics:
            manifest = _replace(manifest, metrics=_names(args.metrics, io.METRICS, "metrics"))
        cache = engine.build_cache(manifest, args.workers)
        engine.write_cache(cache, out / "cache.csv")
    xs = engine.evaluate_cache(cache, manifest.pool_size, measures, manifest.scenario_name)
    engine.write_export(xs, out / "experiments.csv", args.workers)
    n_cand = {t: len(manifest.candidates(t)) for t in manifest.target_ids}
    summary = engine.summarize(xs, manifest.pool_size, n_cand)
    engine.write_summary(summary, out / "summary.json")
    print(f"experiments,{summary['experiments']}")
    print(f"closed_form_count,{summary['closed_form_count']}")
    print(f"metric_evaluations,{summary['metric_evaluations']}")
    return 0


def _replace(manifest, **changes):
    from dataclasses import replace

    return replace(manifest, **changes)


def _components(text: str | None) -> tuple[str, ...]:
    return _names(text, stability.COMPONENTS, "component") or stability.COMPONENTS


def cmd_stability(args) -> int:
    xs = engine.read_export(args.export)
    report = stability.stability_report(xs, _components(args.component), args.mode, args.budget, args.seed)
    table = stability.win_rate(xs)
    ss_text = stability.format_stability(report)
    wr_text = stability.format_win_rate(table)
    for c, r in report.results.items():
        if r.ss is None:
            log.warning("setup stability for %s is undefined: %s", c, r.note)
    if args.out:
        out = _out_dir(args.out)
        (out / "stability.csv").write_text(ss_text)
        (out / "winrate.csv").write_text(wr_text)
        (out / "report.json").write_text(stability.dumps(report, table))
    sys.stdout.write(ss_text + "\n" + wr_text)
    return 0


def cmd_winrate(args) -> int:
    xs = engine.read_export(args.export)
    table = stability.win_rate(xs)
    text = stability.format_win_rate(table)
    if args.out:
        out = _out_dir(args.out)
        (out / "winrate.csv").write_text(text)
        (out / "winrate.json").write_text(stability.dumps(None, table))
    sys.stdout.write(text)
    return 0


def _load_yaml(path, error=ManifestError) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise error(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise error(f"{path}: malformed document: {exc}") from exc
    if not isinstance(doc, dict):
        raise error(f"{path}: expected a mapping")
    return doc


def cmd_synth(args) -> int:
    doc = _load_yaml(args.spec) if args.spec else {}
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        spec = SyntheticSpec.from_dict(doc)
    except (TypeError, ValidationError) as exc:
        raise ManifestError(f"{args.spec}: {exc}") from exc
    gen = generate_synthetic_scenario(spec, _out_dir(args.out))
    print(gen.manifest_path)
    return 0


def cmd_targetpool(args) -> int:
    """Build a class-subsampled target pool; evaluate it when accuracies are available."""
    doc = _load_yaml(args.spec)
    root = Path(args.spec).parent
    try:
        pool_spec = TargetPoolSpec(**(doc.get("pool") or {}))
    except (TypeError, ValidationError) as exc:
        raise ManifestError(f"pool: {exc}") from exc
    if args.seed is not None:
        pool_spec = _replace(pool_spec, seed=args.seed)
    if "labels" not in doc:
        raise ManifestError("missing required field 'labels'")
    labels = io.read_labels(root / doc["labels"])
    feats = io.read_matrix(root / doc["features"]) if doc.get("features") else None
    preds = io.read_matrix(root / doc["predictions"], kind="predictions") if doc.get("predictions") else None
    metrics = _names(args.metrics, io.METRICS, "metrics") or tuple(doc.get("metrics", ["numc"]))
    measure = doc.get("measure", "weighted_kendall")
    if measure not in io.MEASURES:
        raise ManifestError(f"measure: unknown measure {measure!r}")

    out = _out_dir(args.out)
    subsets = sample_target_pool(pool_spec, labels)
    with open(out / "subsets.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subset_index", "n_classes", "classes"])
        for i, s in enumerate(subsets):
            w.writerow([i, len(s), ";".join(map(str, s))])

    n_classes = len(np.unique(labels))
    if doc.get("accuracies"):
        acc_path = root / doc["accuracies"]
        accuracies = _read_subset_accuracies(acc_path, len(subsets))
    elif doc.get("accuracy_link") == "class_count":
        noise = float(doc.get("accuracy_noise", 0.0))
        accuracies = class_count_accuracy(subsets, n_classes, noise, pool_spec.seed)
    else:
        print(f"wrote {len(subsets)} subsets; supply per-subset accuracies to evaluate")
        return 0

    res = run_target_selection(pool_spec, labels, metrics, measure, accuracies, feats, preds, GmmConfig())
    with open(out / "metric_values.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subset_index", "accuracy", *res.metrics])
        for i, row in enumerate(res.values):
            w.writerow([i, engine.format_value(res.accuracies[i]), *map(engine.format_value, row)])
    text = "metric," + measure + "\n" + "".join(f"{m},{engine.format_value(q)}\n" for m, q in res.quality.items())
    (out / "quality.csv").write_text(text)
    sys.stdout.write(text)
    return 0


def _read_subset_accuracies(path, n: int) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read subset accuracies {path}: {exc}") from exc
    if not rows or rows[0] != ["subset_index", "accuracy"]:
        raise FormatError(f"{path}: header must be subset_index,accuracy")
    acc = np.full(n, np.nan)
    for r in rows[1:]:
        if r:
            acc[int(r[0])] = float(r[1])
    if np.isnan(acc).any() or np.any((acc < 0) | (acc > 1)):
        raise ValidationError(f"{path}: need one accuracy in [0, 1] for each of {n} subsets")
    return acc


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="transtab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("metrics", help="score one (source, target) pair with every metric")
    s.add_argument("--manifest", required=True)
    s.add_argument("--source", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--metrics")
    s.add_argument("--out")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("scenario", help="enumerate and evaluate every experiment of a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--cache", help="prebuilt cache.csv; skips metric computation")
    s.add_argument("--metrics")
    s.add_argument("--measures")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_scenario)

    for name, func, helptext in (
        ("stability", cmd_stability, "setup stability and win rates from an experiment export"),
        ("winrate", cmd_winrate, "win-rate table from an experiment export"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--export", required=True, help="experiments.csv written by 'scenario'")
        s.add_argument("--out")
        if name == "stability":
            s.add_argument("--component", help="comma list of source_pool,target,measure")
            s.add_argument("--mode", choices=("exact", "sampled"), default="sampled")
            s.add_argument("--budget", type=int, default=stability.DEFAULT_BUDGET)
            s.add_argument("--seed", type=int, default=0)
        s.set_defaults(func=func)

    s = sub.add_parser("synth", help="generate a synthetic scenario with a planted order")
    s.add_argument("--spec", help="synthetic spec document (YAML)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("targetpool", help="class-subsampled target pool for one source model")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--metrics")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_targetpool)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore")
    try:
        threads = os.environ.get("TRANSTAB_THREADS")
        if threads is not None and not (threads.isdigit() and int(threads) > 0):
            raise UsageError(f"TRANSTAB_THREADS must be a positive integer, got {threads!r}")
        return args.func(args)
    except UsageError as exc:
        print(f"transtab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ManifestError as exc:
        print(f"transtab: manifest error: {exc}", file=sys.stderr)
        return EXIT_MANIFEST
    except (DataError, FormatError, ValidationError) as exc:
        print(f"transtab: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"transtab: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
