"""Command-line entry point: synth, preprocess, train, evaluate, report.

Settings resolve as command-line flag > ``--config`` JSON file > built-in default.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence,
5 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import tensor_nn as nn
from .densenet import ConfigError, ModelConfig, build
from .evaluation import evaluate, render_report, report_from_dict, report_to_dict, write_report_files
from .experiment import build_split, evaluate_split, experiment_schema, init_output_bias
from .gaze_io import (
    AmbiguousLabelError,
    ColumnMap,
    LabelSchemaError,
    RecordingId,
    RecordingParseError,
    SplitConfigError,
    align,
    load_labels,
    load_manifest,
    load_recording,
)
from .signal_prep import PrepConfig, ShortRecordingError, SignalLengthError, VelocitySequence, preprocess
from .synth import SynthConfig, write_dataset
from .training import (
    DivergenceError,
    TrainConfig,
    TrainConfigError,
    load_checkpoint,
    save_checkpoint,
    predict,
    seed_all,
    stack_inputs,
    stack_labels,
    train,
)

log = logging.getLogger("gazescore")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4, 5

DEFAULTS = {
    "experiment": "known",
    "seed": 0,
    "epochs": 50,
    "batch_size": 16,
    "lr": 3e-4,
    "dropout": 0.3,
    "weight_decay": 1e-4,
    "patience": 10,
    "short_recording_policy": "drop",
    "dilation_mode": "mod-exponent",
    "accuracy_mode": "per-element",
    "downsample_mode": "decimate",
    "embed_dim": 128,
    "head_hidden": 128,
    "sessions": "1,2",
    "bias_init": False,
    # synth
    "n_subjects": 40,
    "rounds": "2,3,4",
    "tasks": "TEX",
    "duration": 55.0,
    "p_missing_round": 0.0,
}

ARCHIVE_NAME = "preprocessed.gzsc"
CHECKPOINT_NAME = "checkpoint.gzsc"


class CliConfigError(Exception):
    pass


class CliDataError(Exception):
    pass


def _ints(text) -> tuple[int, ...]:
    return tuple(int(t) for t in str(text).split(",") if t.strip())


def _resolve(args) -> dict:
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                from_file = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliConfigError(f"cannot read config file {args.config}: {exc}") from None
        unknown = set(from_file) - set(DEFAULTS) - {"manifest", "labels", "archive", "out", "checkpoint"}
        if unknown:
            raise CliConfigError(f"unknown config keys: {sorted(unknown)}")
        settings.update({k.replace("-", "_"): v for k, v in from_file.items()})
    for k, v in vars(args).items():
        if v is not None and k not in ("func", "config"):
            settings[k] = v
    return settings


def _prep_config(s) -> PrepConfig:
    return PrepConfig(short_policy=s["short_recording_policy"], downsample_mode=s["downsample_mode"])


def _model_config(s, n_targets: int) -> ModelConfig:
    return ModelConfig(n_targets=n_targets, dropout_rate=float(s["dropout"]), dilation_mode=s["dilation_mode"],
                       embed_dim=int(s["embed_dim"]), head_hidden=int(s["head_hidden"]))


def _train_config(s) -> TrainConfig:
    return TrainConfig(batch_size=int(s["batch_size"]), lr=float(s["lr"]), max_epochs=int(s["epochs"]),
                       weight_decay=float(s["weight_decay"]), early_stop_patience=int(s["patience"]),
                       seed=int(s["seed"]))


def _require_file(s, key: str) -> str:
    path = s.get(key)
    if not path:
        raise CliConfigError(f"--{key} is required")
    if not os.path.isfile(path):
        raise CliConfigError(f"--{key}: no such file {path}")
    return path


# ---------------------------------------------------------------------------
# preprocessing archive: the checkpoint container with identities in the header


def preprocess_manifest(manifest: str, prep: PrepConfig, column_map: ColumnMap = ColumnMap()):
    seqs, summary = [], {"total": 0, "ok": 0, "dropped_short": 0, "nan_heavy": 0, "dropped_ids": []}
    for path, rid in load_manifest(manifest):
        summary["total"] += 1
        rec = load_recording(path, column_map, recording_id=rid)
        head = rec.x[:int(prep.duration_s * 1000)]
        if head.size and np.isnan(head).mean() > 0.5:
            summary["nan_heavy"] += 1
        try:
            seqs.append(preprocess(rec, prep))
        except (ShortRecordingError, SignalLengthError) as exc:
            summary["dropped_short"] += 1
            summary["dropped_ids"].append(str(rid))
            log.warning("dropping %s: %s", rid, exc)
            continue
        summary["ok"] += 1
    return seqs, summary


def save_archive(path: str, seqs: list[VelocitySequence], summary: dict) -> None:
    ids = [[s.source_id.subject_id, s.source_id.round, s.source_id.session, s.source_id.task] for s in seqs]
    values = np.stack([s.values for s in seqs]) if seqs else np.zeros((0, 2, 5000), np.float32)
    nn.write_arrays(path, {"values": values}, {"kind": "preprocessed"}, {"ids": ids, "summary": summary})


def load_archive(path: str) -> list[VelocitySequence]:
    arrays, cfg, meta = nn.read_arrays(path)
    if cfg.get("kind") != "preprocessed":
        raise CliDataError(f"{path} is not a preprocessed archive")
    return [VelocitySequence(v, RecordingId(i[0], int(i[1]), int(i[2]), i[3]))
            for v, i in zip(arrays["values"], meta["ids"])]


def _load_samples(s):
    schema = experiment_schema(s["experiment"])
    labels_path = _require_file(s, "labels")
    if s.get("archive"):
        seqs = load_archive(_require_file(s, "archive"))
    else:
        seqs, _ = preprocess_manifest(_require_file(s, "manifest"), _prep_config(s))
    result = align(seqs, load_labels(labels_path, schema))
    log.info("aligned %d samples (%d recordings unmatched, %d label rows unmatched)",
             len(result.samples), len(result.unmatched_recordings), len(result.unmatched_labels))
    return result.samples


# ---------------------------------------------------------------------------
# commands


def cmd_synth(s) -> int:
    cfg = SynthConfig(n_subjects=int(s["n_subjects"]), rounds=_ints(s["rounds"]), sessions=_ints(s["sessions"]),
                      tasks=tuple(t.strip() for t in str(s["tasks"]).split(",")), duration_s=float(s["duration"]),
                      p_missing_round=float(s["p_missing_round"]), seed=int(s["seed"]))
    out = s["out"]
    os.makedirs(out, exist_ok=True)
    paths = write_dataset(cfg, out)
    print(json.dumps(paths, indent=2))
    return EXIT_OK


def cmd_preprocess(s) -> int:
    out = s["out"]
    os.makedirs(out, exist_ok=True)
    seqs, summary = preprocess_manifest(_require_file(s, "manifest"), _prep_config(s))
    save_archive(os.path.join(out, ARCHIVE_NAME), seqs, summary)
    with open(os.path.join(out, "preprocess_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(f"{summary['ok']} of {summary['total']} recordings preprocessed; "
          f"{summary['dropped_short']} dropped as short, {summary['nan_heavy']} NaN-heavy")
    return EXIT_OK


def _run_settings_for_file(s) -> dict:
    keep = set(DEFAULTS) | {"manifest", "labels", "archive"}
    d = {k: v for k, v in s.items() if k in keep}
    for k in ("manifest", "labels", "archive"):
        if d.get(k):
            d[k] = os.path.abspath(d[k])
    return d


def cmd_train(s) -> int:
    schema = experiment_schema(s["experiment"])
    out = s["out"]
    samples = _load_samples(s)
    os.makedirs(out, exist_ok=True)
    seed = int(s["seed"])
    split = build_split(s["experiment"], samples, seed, _ints(s["sessions"]))
    streams = seed_all(seed)
    model = build(_model_config(s, len(schema.target_names)), streams.init)
    if s["bias_init"]:
        init_output_bias(model, stack_labels(split.train))
    with np.errstate(over="ignore", invalid="ignore"):   # divergence is caught as a non-finite loss
        _, history = train(model, split, _train_config(s), streams)
    save_checkpoint(model, os.path.join(out, CHECKPOINT_NAME), meta={"run": _run_settings_for_file(s)})
    with open(os.path.join(out, "history.json"), "w") as fh:
        json.dump(history.to_dict(), fh, indent=2)
    with open(os.path.join(out, "training_log.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
        for i, (a, b, t) in enumerate(zip(history.train_loss, history.val_loss, history.seconds), start=1):
            w.writerow([i, repr(a), repr(b), f"{t:.3f}"])
    with open(os.path.join(out, "training_log.txt"), "w") as fh:
        fh.write(f"initial val_loss {history.initial_val_loss:.6f}\n")
        for i, (a, b, t) in enumerate(zip(history.train_loss, history.val_loss, history.seconds), start=1):
            fh.write(f"epoch {i:3d}  train_loss {a:.6f}  val_loss {b:.6f}  {t:.1f}s\n")
        fh.write(f"best epoch {history.best_epoch}, stopped early: {history.stopped_early}\n")
    val_report = evaluate(predict(model, stack_inputs(split.val)), stack_labels(split.val), "val",
                          schema.target_names)
    with open(os.path.join(out, "val_report.md"), "w", encoding="utf-8") as fh:
        fh.write(render_report([val_report], "markdown", accuracy_mode=s["accuracy_mode"]))
    print(f"best epoch {history.best_epoch}: val loss {history.best_val_loss:.4f}; "
          f"checkpoint {os.path.join(out, CHECKPOINT_NAME)}")
    return EXIT_OK


def cmd_evaluate(s) -> int:
    ckpt = _require_file(s, "checkpoint")
    try:
        stored = nn.read_arrays(ckpt)[2].get("run", {})
    except nn.CheckpointError as exc:
        raise CliDataError(str(exc)) from None
    # data paths and split-defining settings come from the training run unless overridden on the command line
    merged = dict(stored)
    merged.update({k: v for k, v in s.items() if k in ("manifest", "labels", "archive", "out", "checkpoint",
                                                        "accuracy_mode") and v is not None})
    s = {**DEFAULTS, **merged}
    model = load_checkpoint(ckpt)
    samples = _load_samples(s)
    split = build_split(s["experiment"], samples, int(s["seed"]), _ints(s["sessions"]))
    reports = evaluate_split(model, split)
    out = s.get("out") or os.path.dirname(ckpt)
    write_report_files(reports, out, s["accuracy_mode"])
    with open(os.path.join(out, "reports.json"), "w") as fh:
        json.dump({"experiment": s["experiment"], "accuracy_mode": s["accuracy_mode"],
                   "reports": [report_to_dict(r) for r in reports]}, fh, indent=2)
    print(render_report(reports, "text", accuracy_mode=s["accuracy_mode"]))
    return EXIT_OK


EXPERIMENT_TITLES = {"known": "Known subjects (cross-round)", "unknown": "Unknown subjects (cross-subject)"}


def cmd_report(s) -> int:
    run = s["run"]
    if not os.path.isdir(run):
        raise CliConfigError(f"--run: no such directory {run}")
    found = []
    for d in [run] + sorted(os.path.join(run, e) for e in os.listdir(run)):
        p = os.path.join(d, "reports.json")
        if os.path.isfile(p):
            with open(p) as fh:
                found.append(json.load(fh))
    if not found:
        raise CliDataError(f"{run}: no reports.json found; run `gazescore evaluate` first")
    found.sort(key=lambda d: d["experiment"] != "known")
    parts, n = ["# Results\n"], 0
    for d in found:
        reports = [report_from_dict(r) for r in d["reports"]]
        title = EXPERIMENT_TITLES.get(d["experiment"], d["experiment"])
        n += 1
        parts.append(f"## Table {n}: {title}, overall\n")
        parts.append(render_report(reports, "markdown", "overall", d.get("accuracy_mode", "per-element")))
        n += 1
        parts.append(f"## Table {n}: {title}, per target\n")
        parts.append(render_report(reports, "markdown", "per_target"))
    text = "\n".join(parts)
    path = os.path.join(run, "summary.md")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------


def _add_common(p, data: bool = True, model: bool = False):
    p.add_argument("--config", help="JSON file of settings (flags override it)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    if data:
        p.add_argument("--experiment", choices=["known", "unknown"])
        p.add_argument("--manifest")
        p.add_argument("--labels")
        p.add_argument("--archive", help="preprocessed archive from `gazescore preprocess`")
        p.add_argument("--short-recording-policy", dest="short_recording_policy", choices=["drop", "pad"])
        p.add_argument("--downsample-mode", dest="downsample_mode", choices=["decimate", "mean"])
        p.add_argument("--sessions", help="comma-separated sessions for the known-subject split")
        p.add_argument("--accuracy-mode", dest="accuracy_mode", choices=["per-element", "per-sample"])
    if model:
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--dropout", type=float)
        p.add_argument("--weight-decay", dest="weight_decay", type=float)
        p.add_argument("--patience", type=int)
        p.add_argument("--dilation-mode", dest="dilation_mode", choices=["mod-exponent", "literal"])
        p.add_argument("--embed-dim", dest="embed_dim", type=int)
        p.add_argument("--head-hidden", dest="head_hidden", type=int)
        p.add_argument("--bias-init", dest="bias_init", action="store_const", const=True,
                       help="start the output bias at the training-label mean")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gazescore", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic manifest, recordings and rating tables")
    _add_common(p, data=False)
    p.add_argument("--n-subjects", dest="n_subjects", type=int)
    p.add_argument("--rounds")
    p.add_argument("--sessions")
    p.add_argument("--tasks")
    p.add_argument("--duration", type=float, help="recording length in seconds")
    p.add_argument("--p-missing-round", dest="p_missing_round", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="preprocess every recording of a manifest into an archive")
    _add_common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train the DenseNet regressor")
    _add_common(p, model=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="test-partition reports for a checkpoint, with the global-mean baseline")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="combine evaluated runs into markdown tables")
    p.add_argument("--run", required=True, help="run directory (or a directory of runs)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = args.func
    try:
        s = _resolve(args)
        if func is not cmd_report and not s.get("out") and func is not cmd_evaluate:
            raise CliConfigError("--out is required")
        return func(s)
    except (CliConfigError, ConfigError, TrainConfigError, SplitConfigError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (CliDataError, RecordingParseError, LabelSchemaError, AmbiguousLabelError, nn.CheckpointError,
            nn.ShapeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
