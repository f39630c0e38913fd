"""Command-line entry point.

Subcommands
-----------
``verify-bounds``
    Fuzz the contrastive-loss lower bounds over random configurations (and
    optionally one constructed case file); write a JSON report.
``synth``
    Generate a synthetic dataset from a config and write train/test splits
    as delimited text files.
``pretrain``
    Run the full training pipeline for every configured seed; write
    parameters, run records, and per-class loss CSVs.
``probe``
    Fit a linear probe on a frozen encoder checkpoint (or an untrained
    random encoder) and write the resulting metrics.
``report``
    Aggregate run records across seeds into a per-variant mean±std table.

Conventions: exit code 0 on success, 1 on usage or input errors, 2 on
verification failures (bound violations, diverged training).  Every
subcommand writes a manifest describing the resolved configuration, so a
run can be reproduced from its output directory alone.  The default output
root is ``./runs``, overridable with ``--out`` or the ``TSCL_OUTPUT_ROOT``
environment variable.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import dataclasses
import json
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .augment import TimeSeriesBatch
from .bounds import bound_sc, bound_uc, check_equality_conditions, fuzz_bounds
from .data import SynthSpec, generate, load_delimited, save_delimited, split_labels, stratified_split
from .errors import ParameterError, TrainingDivergedError
from .harness import (
    RunRecord,
    TrainConfig,
    class_loss_csv,
    linear_probe,
    load_run_record,
    model_config_for,
    pretrain,
    run_experiment,
    save_run_record,
)
from .losses import BatchIndexing
from .model import init_model, load_values, rebuild_with_values, save_values
from .tensor import Tensor2D

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2

CONFIG_SCHEMA = "tscl-config-v1"
MANIFEST_SCHEMA = "tscl-manifest-v1"

#: Fixed tag mixed into the run seed to derive the label-split stream, so the
#: labeled subset is reproducible per seed yet independent of training noise.
_LABEL_SPLIT_TAG = 7


# ---------------------------------------------------------------------------
# Shared plumbing


class _Parser(argparse.ArgumentParser):
    """Argument parser that exits with code 1 on usage errors."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _output_dir(args: argparse.Namespace, subcommand: str) -> Path:
    if args.out is not None:
        out = Path(args.out)
    else:
        root = os.environ.get("TSCL_OUTPUT_ROOT", "runs")
        out = Path(root) / subcommand
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_manifest(
    out_dir: Path,
    subcommand: str,
    config_path: Optional[str],
    resolved: dict,
    seeds: Sequence[int],
    started: float,
) -> None:
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "subcommand": subcommand,
        "config_path": config_path,
        "resolved_config": resolved,
        "seeds": list(seeds),
        "output_dir": str(out_dir),
        "tool_version": __version__,
        "duration_seconds": time.time() - started,
    }
    final = out_dir / "manifest.json"
    tmp = out_dir / "manifest.json.tmp"
    _write_json(tmp, manifest)
    os.replace(tmp, final)


def _load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ParameterError(f"{path}: config file not found")
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path}: invalid JSON ({exc})")
    if not isinstance(doc, dict):
        raise ParameterError(f"{path}: config must be a JSON object")
    schema = doc.get("schema")
    if schema != CONFIG_SCHEMA:
        raise ParameterError(
            f"{path}: field 'schema' must be {CONFIG_SCHEMA!r}, got {schema!r}"
        )
    return doc


def _apply_overrides(doc: dict, assignments: Sequence[str]) -> dict:
    """Apply ``--set dotted.key=value`` overrides (values parsed as JSON)."""
    for item in assignments:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ParameterError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ParameterError(f"--set {key}: {part!r} is not an object")
            node = child
        node[parts[-1]] = value
    return doc


def _section(doc: dict, name: str, path: str, required: bool = True) -> dict:
    sec = doc.get(name)
    if sec is None:
        if required:
            raise ParameterError(f"{path}: missing config section {name!r}")
        return {}
    if not isinstance(sec, dict):
        raise ParameterError(f"{path}: section {name!r} must be an object")
    return sec


def _train_config(doc: dict, path: str) -> TrainConfig:
    try:
        return TrainConfig.from_dict(_section(doc, "train", path))
    except (TypeError, ValueError) as exc:
        raise ParameterError(f"{path}: train section: {exc}")


def _synth_spec(doc: dict, path: str) -> tuple[SynthSpec, float]:
    sec = dict(_section(doc, "synth", path))
    test_fraction = sec.pop("test_fraction", 0.2)
    if "class_counts" in sec:
        sec["class_counts"] = tuple(int(c) for c in sec["class_counts"])
    known = {f.name for f in dataclasses.fields(SynthSpec)}
    extra = set(sec) - known
    if extra:
        raise ParameterError(f"{path}: synth section: unknown fields {sorted(extra)}")
    try:
        return SynthSpec(**sec), float(test_fraction)
    except (TypeError, ValueError) as exc:
        raise ParameterError(f"{path}: synth section: {exc}")


def _load_dataset(doc: dict, path: str, which: str) -> TimeSeriesBatch:
    sec = _section(doc, "data", path)
    for field_name in (f"{which}_path", "channels", "length"):
        if field_name not in sec:
            raise ParameterError(f"{path}: data section: missing field {field_name!r}")
    return load_delimited(
        sec[f"{which}_path"],
        channels=int(sec["channels"]),
        length=int(sec["length"]),
        n_classes=int(sec["n_classes"]) if "n_classes" in sec else None,
    )


def _label_split_for_seed(
    batch: TimeSeriesBatch, fraction: float, seed: int
) -> TimeSeriesBatch:
    rng = np.random.default_rng(np.random.SeedSequence([seed, _LABEL_SPLIT_TAG]))
    return split_labels(batch, fraction, rng)


# ---------------------------------------------------------------------------
# verify-bounds


def _evaluate_case(case_path: str, slack_floor: float) -> dict:
    try:
        with open(case_path, "r", encoding="utf-8") as fh:
            case = json.load(fh)
    except FileNotFoundError:
        raise ParameterError(f"{case_path}: case file not found")
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{case_path}: invalid JSON ({exc})")
    for field_name in ("values", "labels", "partner"):
        if field_name not in case:
            raise ParameterError(f"{case_path}: missing field {field_name!r}")
    values = np.asarray(case["values"], dtype=np.float64)
    idx = BatchIndexing(
        labels=np.asarray(case["labels"], dtype=np.int64),
        partner=np.asarray(case["partner"], dtype=np.intp),
    )
    temperature = float(case.get("temperature", 1.0))

    rows = []
    worst = np.inf
    violations = 0
    for y in sorted(int(c) for c in np.unique(idx.labels)):
        members = idx.class_members()[y]
        if members.size < 2 or members.size == idx.n:
            continue
        for kind, fn in (("class", bound_sc), ("instance", bound_uc)):
            report = fn(values, idx, y, temperature=temperature)
            equality = check_equality_conditions(values, idx, y)
            slack = report.slack
            worst = min(worst, slack)
            if slack < slack_floor:
                violations += 1
            rows.append(
                {
                    "class": y,
                    "kind": kind,
                    "bound": report.total_bound,
                    "actual": report.total_actual,
                    "slack": slack,
                    "q1_satisfied": equality.q1_satisfied,
                    "q2_satisfied": equality.q2_satisfied,
                }
            )
    if not rows:
        raise ParameterError(
            f"{case_path}: no class admits a bound (each needs >=2 members "
            "and a nonempty complement)"
        )
    return {
        "path": case_path,
        "temperature": temperature,
        "bounds": rows,
        "worst_slack": float(worst),
        "violations": violations,
    }


def _cmd_verify_bounds(args: argparse.Namespace) -> int:
    started = time.time()
    out_dir = _output_dir(args, "verify-bounds")
    summary = fuzz_bounds(
        configurations=args.configurations,
        seed=args.seed,
        max_batch=args.max_batch,
        max_dim=args.max_dim,
        max_classes=args.max_classes,
        temperatures=tuple(args.tau),
    )
    case_report = _evaluate_case(args.case, -1e-9) if args.case else None
    violations = summary.violations + (case_report["violations"] if case_report else 0)

    payload = {
        "schema": "tscl-bounds-report-v1",
        "fuzz": summary.to_dict(),
        "case": case_report,
        "violations": violations,
    }
    _write_json(out_dir / "bounds_report.json", payload)
    _write_manifest(
        out_dir,
        "verify-bounds",
        None,
        {
            "configurations": args.configurations,
            "seed": args.seed,
            "max_batch": args.max_batch,
            "max_dim": args.max_dim,
            "max_classes": args.max_classes,
            "tau": list(args.tau),
            "case": args.case,
        },
        [args.seed],
        started,
    )
    print(
        f"configurations={summary.configurations} evaluations={summary.evaluations} "
        f"violations={violations} worst_slack={summary.worst_slack:.3e} "
        f"equality_cases={summary.equality_evaluations} "
        f"elapsed={summary.elapsed_seconds:.2f}s"
    )
    if case_report is not None:
        print(
            f"case {case_report['path']}: worst_slack={case_report['worst_slack']:.3e} "
            f"violations={case_report['violations']}"
        )
    return EXIT_OK if violations == 0 else EXIT_VERIFY


# ---------------------------------------------------------------------------
# synth


def _cmd_synth(args: argparse.Namespace) -> int:
    started = time.time()
    doc = _apply_overrides(_load_config(args.config), args.set)
    spec, test_fraction = _synth_spec(doc, args.config)
    out_dir = _output_dir(args, "synth")

    full = generate(spec)
    if test_fraction > 0.0:
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
        train, test = stratified_split(full, test_fraction, rng)
        save_delimited(train, out_dir / "train.csv")
        save_delimited(test, out_dir / "test.csv")
        written = ["train.csv", "test.csv"]
        sizes = {"train": train.n, "test": test.n}
    else:
        save_delimited(full, out_dir / "full.csv")
        written = ["full.csv"]
        sizes = {"full": full.n}

    _write_manifest(out_dir, "synth", args.config, doc, [spec.seed], started)
    print(
        f"wrote {', '.join(written)} to {out_dir} "
        f"({', '.join(f'{k}={v}' for k, v in sizes.items())}, "
        f"channels={spec.channels}, length={spec.length})"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# pretrain


def _run_one_seed(
    config: TrainConfig,
    train: TimeSeriesBatch,
    test: TimeSeriesBatch,
    seed: int,
    probe_epochs: int,
    probe_lr: float,
) -> tuple[dict, dict]:
    """Worker for one seed; returns picklable (record dict, value arrays)."""
    labeled = _label_split_for_seed(train, config.label_fraction, seed)
    params, record = run_experiment(
        config, labeled, test, seed=seed, probe_epochs=probe_epochs, probe_lr=probe_lr
    )
    values = {name: node.value.array for name, node in params.named().items()}
    return record.to_dict(), values


def _cmd_pretrain(args: argparse.Namespace) -> int:
    started = time.time()
    doc = _apply_overrides(_load_config(args.config), args.set)
    config = _train_config(doc, args.config)
    probe_sec = _section(doc, "probe", args.config, required=False)
    probe_epochs = int(probe_sec.get("epochs", 200))
    probe_lr = float(probe_sec.get("lr", 1e-2))
    train = _load_dataset(doc, args.config, "train")
    test = _load_dataset(doc, args.config, "test")
    out_dir = _output_dir(args, "pretrain")

    seeds = list(config.seeds)
    results: list[tuple[dict, dict]] = []
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [
                pool.submit(_run_one_seed, config, train, test, s, probe_epochs, probe_lr)
                for s in seeds
            ]
            results = [f.result() for f in futures]
    else:
        results = [
            _run_one_seed(config, train, test, s, probe_epochs, probe_lr) for s in seeds
        ]

    for seed, (record_dict, values) in zip(seeds, results):
        record = RunRecord.from_dict(record_dict)
        _save_seed_outputs(out_dir, seed, record, values)
        metrics = record.final_metrics or {}
        print(
            f"seed {seed}: final combined loss "
            f"{record.epoch_stats[-1].combined:.4f}, "
            f"accuracy {metrics.get('accuracy', float('nan')):.4f}, "
            f"macro-F1 {metrics.get('macro_f1', float('nan')):.4f}"
        )

    _write_manifest(out_dir, "pretrain", args.config, doc, seeds, started)
    return EXIT_OK


def _save_seed_outputs(out_dir: Path, seed: int, record: RunRecord, values: dict) -> None:
    save_run_record(record, str(out_dir / f"record_seed{seed}.json"))
    (out_dir / f"class_losses_seed{seed}.csv").write_text(
        class_loss_csv(record), encoding="utf-8"
    )
    save_values(
        {name: Tensor2D(arr) for name, arr in values.items()},
        out_dir / f"params_seed{seed}.json",
    )


# ---------------------------------------------------------------------------
# probe


def _cmd_probe(args: argparse.Namespace) -> int:
    started = time.time()
    doc = _apply_overrides(_load_config(args.config), args.set)
    config = _train_config(doc, args.config)
    probe_sec = _section(doc, "probe", args.config, required=False)
    probe_epochs = int(probe_sec.get("epochs", 200))
    probe_lr = float(probe_sec.get("lr", 1e-2))
    train = _load_dataset(doc, args.config, "train")
    test = _load_dataset(doc, args.config, "test")
    out_dir = _output_dir(args, "probe")

    seed = args.seed if args.seed is not None else config.seeds[0]
    model_config = model_config_for(config, train)
    params = init_model(
        model_config, np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
    )
    if args.params is not None:
        params = rebuild_with_values(params, load_values(args.params))
        source = args.params
    else:
        source = "untrained (random initialization)"

    labeled = _label_split_for_seed(train, config.label_fraction, seed)
    _, report = linear_probe(
        params, model_config, labeled, test, epochs=probe_epochs, lr=probe_lr
    )
    payload = {
        "schema": "tscl-metrics-v1",
        "seed": seed,
        "variant": config.variant,
        "params": source,
        "metrics": report.to_dict(),
    }
    _write_json(out_dir / "metrics.json", payload)
    _write_manifest(out_dir, "probe", args.config, doc, [seed], started)
    print(
        f"probe on {source}: accuracy {report.accuracy:.4f}, "
        f"macro-F1 {report.macro_f1:.4f}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def _format_cell(values: list[float]) -> str:
    arr = np.asarray(values, dtype=np.float64) * 100.0
    return f"{arr.mean():.2f}±{arr.std():.2f}"


def _cmd_report(args: argparse.Namespace) -> int:
    started = time.time()
    records: list[RunRecord] = []
    for run_dir in args.run_dirs:
        base = Path(run_dir)
        if not base.is_dir():
            raise ParameterError(f"{run_dir}: not a directory")
        for path in sorted(base.glob("record_*.json")):
            record = load_run_record(str(path))
            if record.final_metrics is None:
                raise ParameterError(f"{path}: record has no final metrics")
            records.append(record)
    if not records:
        raise ParameterError("no record_*.json files found in the given directories")

    by_variant: dict[str, list[RunRecord]] = {}
    for record in records:
        by_variant.setdefault(record.variant, []).append(record)

    class_ids: list[str] = sorted(
        {y for r in records for y in r.final_metrics["per_class"]}, key=int
    )
    header = ["variant", "seeds", "accuracy", "macro_f1"] + [
        f"f1_class_{y}" for y in class_ids
    ]
    table = [header]
    for variant in sorted(by_variant):
        group = by_variant[variant]
        row = [
            variant,
            str(len(group)),
            _format_cell([r.final_metrics["accuracy"] for r in group]),
            _format_cell([r.final_metrics["macro_f1"] for r in group]),
        ]
        for y in class_ids:
            row.append(_format_cell([r.final_metrics["per_class"][y]["f1"] for r in group]))
        table.append(row)

    out_dir = _output_dir(args, "report")
    with open(out_dir / "report.csv", "w", encoding="utf-8", newline="") as fh:
        csv.writer(fh).writerows(table)
    _write_manifest(
        out_dir, "report", None, {"run_dirs": list(args.run_dirs)}, [], started
    )

    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    for row in table:
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> _Parser:
    parser = _Parser(prog="tscl", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"tscl {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def add_common(p: _Parser) -> None:
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("verify-bounds", help="fuzz the loss lower bounds")
    add_common(p)
    p.add_argument("--configurations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-batch", type=int, default=16, help="max batch size (pairs x2)")
    p.add_argument("--max-dim", type=int, default=8, help="max embedding dimension")
    p.add_argument("--max-classes", type=int, default=4)
    p.add_argument(
        "--tau", type=float, action="append", default=None,
        help="temperature (repeatable; default 0.2 0.5 1.0)",
    )
    p.add_argument("--case", default=None, help="JSON file with one constructed configuration")
    p.set_defaults(func=_cmd_verify_bounds)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    add_common(p)
    p.add_argument("--config", required=True, help="JSON config with a 'synth' section")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("pretrain", help="train encoders for every configured seed")
    add_common(p)
    p.add_argument("--config", required=True, help="JSON config with 'train' and 'data' sections")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--jobs", type=int, default=1, help="parallel seed workers")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("probe", help="linear-probe a frozen encoder")
    add_common(p)
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--params", default=None, help="checkpoint (default: untrained encoder)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("report", help="aggregate run records into mean±std tables")
    add_common(p)
    p.add_argument("run_dirs", nargs="+", help="directories containing record_*.json")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "tau", None) is not None and not args.tau:
        args.tau = None
    if hasattr(args, "tau") and args.tau is None:
        args.tau = [0.2, 0.5, 1.0]
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(
            f"training diverged: {exc} (last good epoch {exc.last_good_epoch})",
            file=sys.stderr,
        )
        return EXIT_VERIFY
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
