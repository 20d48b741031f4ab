"""Command-line surface: synth, train, report.

Exit codes are a stable contract: 0 success, 2 usage/input error, 3
numerical failure (with partial logs preserved).  Every effective setting
is echoed into the output manifest; wall-clock timestamps live only in the
manifest's ``meta`` field so that all other artifacts are byte-identical
across reruns with the same flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import shutil
import sys
import time

import numpy as np

from . import data as data_mod
from . import metrics as metrics_mod
from .data import DataError, ShiftSpec
from .losses import LossConfig
from .nets import save_checkpoint
from .train import MODES, TrainConfig, TrainingDiverged, run_mode


def _write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def _add_shift_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d", type=int, default=None, help="feature count (default 38)")
    p.add_argument("--shift", type=float, default=None,
                   help="domain mean-shift magnitude (default 2.0)")
    p.add_argument("--pi-source", type=float, default=None,
                   help="source positive-class prior (default 0.10)")
    p.add_argument("--pi-target", type=float, default=None,
                   help="target positive-class prior (default 0.05)")
    p.add_argument("--cov-scale", type=float, default=None,
                   help="target covariance scale (default 1.0)")
    p.add_argument("--components", type=int, default=None,
                   help="mixture components per class (default 2)")
    p.add_argument("--class-sep", type=float, default=None,
                   help="class separation along the class axis")
    p.add_argument("--shift-coherence", type=float, default=None,
                   help="cosine between per-component shift directions (default 0.5)")
    p.add_argument("--n-source", type=int, default=25_000)
    p.add_argument("--n-target", type=int, default=4_000)


def _shift_spec_from_args(args, seed) -> ShiftSpec:
    overrides = {
        "d": args.d, "shift": args.shift, "pi_source": args.pi_source,
        "pi_target": args.pi_target, "cov_scale": args.cov_scale,
        "components": args.components, "class_sep": args.class_sep,
        "shift_coherence": args.shift_coherence,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return ShiftSpec(seed=seed, **overrides)


def cmd_synth(args) -> int:
    spec = _shift_spec_from_args(args, args.seed)
    src, tgt = data_mod.generate_shifted_domains(spec, args.n_source, args.n_target)
    os.makedirs(args.out, exist_ok=True)
    data_mod.write_csv(src, os.path.join(args.out, "source.csv"))
    data_mod.write_csv(tgt, os.path.join(args.out, "target.csv"))
    manifest = {
        "kind": "synthetic-domains",
        "spec": dataclasses.asdict(spec),
        "n_source": args.n_source,
        "n_target": args.n_target,
        "files": ["source.csv", "target.csv"],
        "schema": {"label_column": "label", "positive_label": "1"},
    }
    _write_json(manifest, os.path.join(args.out, "manifest.json"))
    print(f"wrote {args.out}/source.csv ({src.n} rows), target.csv ({tgt.n} rows)")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

_TRAIN_FLAGS = (
    # (flag dest, experiment-file key, type)
    ("mode", "mode", str),
    ("runs", "runs", int),
    ("seed", "seed", int),
    ("epochs", "epochs", int),
    ("batch_size", "batch_size", int),
    ("n_critic", "n_critic", int),
    ("lr", "lr", float),
    ("critic_lr", "critic_lr", float),
    ("rho", "rho", float),
    ("gamma", "gamma", float),
    ("alpha_pos", "alpha_pos", float),
    ("lambda_domain", "lambda_domain", float),
    ("threshold", "threshold", float),
    ("source_sample", "source_sample", int),
    ("target_sample", "target_sample", int),
    ("train_frac", "train_frac", float),
)

_TRAIN_DEFAULTS = {
    "mode": "wd_wada", "runs": 5, "seed": 0, "epochs": 30, "batch_size": 64,
    "n_critic": 5, "lr": 1e-3, "critic_lr": 1e-3, "rho": 10.0, "gamma": 2.0,
    "alpha_pos": None, "lambda_domain": 1.0, "threshold": 0.5,
    "source_sample": 20_000, "target_sample": 2_000, "train_frac": 0.8,
}


def _effective_train_settings(args) -> dict:
    """Flags override the experiment file, which overrides defaults."""
    settings = dict(_TRAIN_DEFAULTS)
    if args.experiment:
        with open(args.experiment, encoding="utf-8") as fh:
            from_file = json.load(fh)
        unknown = set(from_file) - set(settings) - {"task"}
        if unknown:
            raise DataError(f"experiment file has unknown keys: {sorted(unknown)}")
        settings.update({k: v for k, v in from_file.items() if k != "task"})
    for dest, key, _ in _TRAIN_FLAGS:
        value = getattr(args, dest)
        if value is not None:
            settings[key] = value
    return settings


def _resolve_data(args, settings):
    """Either a CSV pair or the synthetic generator; exactly one source."""
    if args.source_csv or args.target_csv:
        if not (args.source_csv and args.target_csv):
            raise DataError("--source-csv and --target-csv must be given together")
        if args.synthetic:
            raise DataError("choose either CSV inputs or --synthetic, not both")
        src = data_mod.load_csv(args.source_csv, args.label_column, args.positive_label)
        tgt = data_mod.load_csv(args.target_csv, args.label_column, args.positive_label)
        task = os.path.splitext(os.path.basename(args.source_csv))[0] + "->" + \
            os.path.splitext(os.path.basename(args.target_csv))[0]
        return src, tgt, task, None
    spec = _shift_spec_from_args(args, args.data_seed)
    src, tgt = data_mod.generate_shifted_domains(spec, args.n_source, args.n_target)
    task = f"synth-d{spec.d}-shift{spec.shift:g}"
    return src, tgt, task, dataclasses.asdict(spec)


def cmd_train(args) -> int:
    settings = _effective_train_settings(args)
    if settings["mode"] not in MODES:
        raise DataError(f"mode must be one of {MODES}, got {settings['mode']!r}")
    if settings["runs"] < 1:
        raise DataError("--runs must be >= 1")

    src, tgt, task, synth_spec = _resolve_data(args, settings)
    os.makedirs(args.out, exist_ok=True)

    loss_cfg = LossConfig(rho=settings["rho"], gamma=settings["gamma"],
                          alpha_pos=settings["alpha_pos"],
                          lambda_domain=settings["lambda_domain"])
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    aucs = []
    t0 = time.perf_counter()
    for run in range(settings["runs"]):
        run_seed = settings["seed"] + run
        run_dir = os.path.join(args.out, f"run_{run:03d}")
        os.makedirs(run_dir, exist_ok=True)
        dataset = data_mod.make_splits(
            src, tgt, source_sample=settings["source_sample"],
            target_sample=settings["target_sample"],
            train_frac=settings["train_frac"], seed=run_seed)
        baseline = None
        if settings["mode"] == "target_only_cnn":
            baseline = data_mod.make_target_baseline(tgt, dataset)
        cfg = TrainConfig(
            mode=settings["mode"], seed=run_seed, epochs=settings["epochs"],
            batch_size=settings["batch_size"], n_critic=settings["n_critic"],
            lr=settings["lr"], critic_lr=settings["critic_lr"], loss=loss_cfg,
            eval_threshold=settings["threshold"])
        try:
            result = run_mode(dataset, cfg, target_baseline=baseline)
        except TrainingDiverged as exc:
            print(f"run {run}: {exc}", file=sys.stderr)
            _write_json({"error": str(exc), "run": run}, os.path.join(run_dir, "error.json"))
            return 3
        result.log.save_jsonl(os.path.join(run_dir, "trainlog.jsonl"))
        metrics_mod.save_report(result.report, os.path.join(run_dir, "metrics.json"))
        metrics_mod.save_roc_csv(result.report, os.path.join(run_dir, "roc.csv"))
        save_checkpoint(result.model, os.path.join(run_dir, "checkpoint"))
        data_mod.save_manifest(dataset, os.path.join(run_dir, "dataset_manifest.json"))
        aucs.append(result.report.auc)
        print(f"run {run}: seed={run_seed} auc={result.report.auc:.4f} "
              f"f1={result.report.f1:.4f} precision={result.report.precision:.4f}")

    if len(aucs) >= 2:
        summary = metrics_mod.robustness_summary(aucs)
        _write_json({
            "aucs": list(summary.values), "mean": summary.mean,
            "lower": summary.lower, "upper": summary.upper, "width": summary.width,
        }, os.path.join(args.out, "robustness.json"))
        print(f"auc mean={summary.mean:.4f} ci=[{summary.lower:.4f}, {summary.upper:.4f}] "
              f"width={summary.width:.4f}")

    manifest = {
        "kind": "training-run",
        "task": task,
        "settings": settings,
        "synthetic_spec": synth_spec,
        "runs": settings["runs"],
        "meta": {"started": started,
                 "elapsed_seconds": round(time.perf_counter() - t0, 3)},
    }
    _write_json(manifest, os.path.join(args.out, "experiment_manifest.json"))
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _load_result_dir(path):
    manifest_path = os.path.join(path, "experiment_manifest.json")
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"{manifest_path}: missing experiment manifest") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: corrupt JSON ({exc})") from None
    reports = []
    for entry in sorted(os.listdir(path)):
        run_dir = os.path.join(path, entry)
        metrics_path = os.path.join(run_dir, "metrics.json")
        if not entry.startswith("run_") or not os.path.exists(metrics_path):
            continue
        try:
            reports.append((entry, metrics_mod.load_report(metrics_path)))
        except (json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"{metrics_path}: corrupt JSON ({exc})") from None
    if not reports:
        raise DataError(f"{path}: no completed runs found")
    robustness = None
    rob_path = os.path.join(path, "robustness.json")
    if os.path.exists(rob_path):
        try:
            with open(rob_path, encoding="utf-8") as fh:
                robustness = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{rob_path}: corrupt JSON ({exc})") from None
    return manifest, reports, robustness


def render_comparison(results) -> str:
    """Fixed-width table: one row per (task, metric), one column per mode."""
    modes = sorted({r["mode"] for r in results})
    tasks = sorted({r["task"] for r in results})
    by_key = {(r["task"], r["mode"]): r for r in results}
    rows = []
    header = ["task", "metric"] + modes + ["auc 95% ci"]
    for task in tasks:
        for metric in ("precision", "f1", "auc"):
            row = [task, metric]
            for mode in modes:
                r = by_key.get((task, mode))
                row.append("-" if r is None else f"{np.median(r[metric]):.2f}")
            if metric == "auc":
                cis = []
                for mode in modes:
                    r = by_key.get((task, mode))
                    if r and r.get("ci"):
                        cis.append(f"{mode}: {r['ci']['mean']:.4f}±{r['ci']['half_width']:.4f}")
                row.append("; ".join(cis))
            else:
                row.append("")
            rows.append(row)
    widths = [max(len(str(row[i])) for row in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    results = []
    os.makedirs(args.out, exist_ok=True)
    for path in args.results:
        manifest, reports, robustness = _load_result_dir(path)
        entry = {
            "task": manifest.get("task", os.path.basename(path.rstrip("/"))),
            "mode": manifest["settings"]["mode"],
            "precision": [r.precision for _, r in reports],
            "f1": [r.f1 for _, r in reports],
            "auc": [r.auc for _, r in reports],
        }
        if robustness:
            entry["ci"] = {"mean": robustness["mean"],
                           "half_width": robustness["width"] / 2.0,
                           "lower": robustness["lower"],
                           "upper": robustness["upper"]}
        results.append(entry)
        for run_name, report in reports:
            roc_src = os.path.join(path, run_name, "roc.csv")
            if os.path.exists(roc_src):
                dest = f"{entry['task']}_{entry['mode']}_{run_name}_roc.csv".replace("/", "-")
                shutil.copyfile(roc_src, os.path.join(args.out, dest))

    table = render_comparison(results)
    with open(os.path.join(args.out, "comparison.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    print(table, end="")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wassda",
        description="Adversarial domain-adaptation experiments for imbalanced "
                    "binary classification")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic shifted domain pair")
    _add_shift_flags(p_synth)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("-o", "--out", required=True, help="output directory")
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train one mode for several seeded runs")
    p_train.add_argument("--mode", choices=MODES, default=None)
    p_train.add_argument("--runs", type=int, default=None,
                         help="repeat count with consecutive seeds (default 5)")
    p_train.add_argument("--seed", type=int, default=None, help="base seed")
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--batch-size", type=int, default=None)
    p_train.add_argument("--n-critic", type=int, default=None)
    p_train.add_argument("--lr", type=float, default=None)
    p_train.add_argument("--critic-lr", type=float, default=None)
    p_train.add_argument("--rho", type=float, default=None)
    p_train.add_argument("--gamma", type=float, default=None)
    p_train.add_argument("--alpha-pos", type=float, default=None)
    p_train.add_argument("--lambda-domain", type=float, default=None)
    p_train.add_argument("--threshold", type=float, default=None)
    p_train.add_argument("--source-sample", type=int, default=None)
    p_train.add_argument("--target-sample", type=int, default=None)
    p_train.add_argument("--train-frac", type=float, default=None)
    p_train.add_argument("--experiment", help="JSON experiment file (flags override it)")
    p_train.add_argument("--source-csv")
    p_train.add_argument("--target-csv")
    p_train.add_argument("--label-column", default="label")
    p_train.add_argument("--positive-label", default="1")
    p_train.add_argument("--synthetic", action="store_true",
                         help="use the synthetic generator (the default when no CSVs)")
    p_train.add_argument("--data-seed", type=int, default=0,
                         help="seed for the synthetic generator")
    _add_shift_flags(p_train)
    p_train.add_argument("-o", "--out", required=True)
    p_train.set_defaults(func=cmd_train)

    p_report = sub.add_parser("report", help="tabulate completed result directories")
    p_report.add_argument("results", nargs="+", help="training output directories")
    p_report.add_argument("-o", "--out", required=True)
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def console_main() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    console_main()
