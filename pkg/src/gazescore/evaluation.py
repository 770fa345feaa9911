"""Regression and agreement metrics, the global-mean baseline, report tables."""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass

import numpy as np

RATING_MIN, RATING_MAX = 1, 7


@dataclass(frozen=True)
class TargetMetrics:
    mae: float
    rmse: float
    pearson_r: float | None     # None when undefined (zero variance)
    r2: float | None            # None when the targets have zero variance


@dataclass(frozen=True)
class OverallMetrics:
    mae: float
    rmse: float
    exact_accuracy: float
    exact_accuracy_per_sample: float


@dataclass(frozen=True)
class MetricsReport:
    per_target: dict[str, TargetMetrics]
    overall: OverallMetrics
    partition_name: str
    n_samples: int
    method: str = "DenseNet"


@dataclass(frozen=True)
class GlobalMeanPredictor:
    mean_vector: np.ndarray

    def predict(self, n: int) -> np.ndarray:
        return np.tile(self.mean_vector, (n, 1))


def fit_global_mean(train_labels) -> GlobalMeanPredictor:
    y = np.asarray(train_labels, dtype=np.float64)
    if y.size == 0:
        raise ValueError("cannot fit a global mean on an empty label set")
    if y.ndim == 1:
        y = y[:, None]
    return GlobalMeanPredictor(y.mean(axis=0))


def _pair(pred, target):
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} != target shape {t.shape}")
    if p.size == 0:
        raise ValueError("metrics need at least one sample")
    return p, t


def mae(pred, target) -> float:
    p, t = _pair(pred, target)
    return float(np.mean(np.abs(p - t)))


def rmse(pred, target) -> float:
    p, t = _pair(pred, target)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def pearson_r(pred, target) -> float | None:
    p, t = _pair(pred, target)
    dp, dt = p - p.mean(), t - t.mean()
    sp, st = np.sqrt(np.sum(dp * dp)), np.sqrt(np.sum(dt * dt))
    # relative threshold: a constant vector can leave rounding-level residue after centering
    scale = max(np.abs(p).max(), np.abs(t).max(), 1.0) * math.sqrt(p.size)
    if sp <= 1e-12 * scale or st <= 1e-12 * scale:
        return None
    return float(np.clip(np.sum(dp * dt) / (sp * st), -1.0, 1.0))


def r_squared(pred, target) -> float | None:
    """1 - SS_res / SS_tot with the mean of ``target`` as reference."""
    p, t = _pair(pred, target)
    ss_tot = np.sum((t - t.mean()) ** 2)
    if ss_tot == 0:
        return None
    return float(1.0 - np.sum((t - p) ** 2) / ss_tot)


def round_half_away(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def rounded_ratings(pred) -> np.ndarray:
    return np.clip(round_half_away(pred), RATING_MIN, RATING_MAX)


def exact_accuracy(pred, target, mode: str = "per-element") -> float:
    """Share of rounded, clamped predictions equal to the rating.

    ``per-element`` counts every (sample, target) pair; ``per-sample``
    counts a sample only when all of its targets match.
    """
    p, t = _pair(pred, target)
    hit = rounded_ratings(p) == t
    if mode == "per-element":
        return float(hit.mean())
    if mode == "per-sample":
        return float(hit.reshape(hit.shape[0], -1).all(axis=1).mean())
    raise ValueError(f"unknown accuracy mode {mode!r}")


def evaluate(predictions, targets, partition_name: str, target_names, method: str = "DenseNet") -> MetricsReport:
    p, t = _pair(predictions, targets)
    if p.ndim == 1:
        p, t = p[:, None], t[:, None]
    names = list(target_names)
    if len(names) != p.shape[1]:
        raise ValueError(f"{len(names)} target names for {p.shape[1]} columns")
    per = {n: TargetMetrics(mae(p[:, j], t[:, j]), rmse(p[:, j], t[:, j]),
                            pearson_r(p[:, j], t[:, j]), r_squared(p[:, j], t[:, j]))
           for j, n in enumerate(names)}
    overall = OverallMetrics(mae(p, t), rmse(p, t), exact_accuracy(p, t), exact_accuracy(p, t, "per-sample"))
    return MetricsReport(per, overall, partition_name, p.shape[0], method)


# ---------------------------------------------------------------------------
# rendering

PARTITION_TITLES = {"round3": "Round 3", "round4": "Round 4", "between": "Between Sessions",
                    "after": "After Sessions", "val": "Validation"}
METHOD_ORDER = ("Global Mean", "DenseNet")


def _fmt(v: float | None, digits: int = 2) -> str:
    return "-" if v is None else f"{v:.{digits}f}"


def _grid(reports):
    partitions, methods = [], []
    for r in reports:
        if r.partition_name not in partitions:
            partitions.append(r.partition_name)
        if r.method not in methods:
            methods.append(r.method)
    methods.sort(key=lambda m: METHOD_ORDER.index(m) if m in METHOD_ORDER else len(METHOD_ORDER))
    index = {(r.method, r.partition_name): r for r in reports}
    return partitions, methods, index


def overall_rows(reports, accuracy_mode: str = "per-element", digits: int = 2):
    partitions, methods, index = _grid(reports)
    header = ["Method"] + [f"{PARTITION_TITLES.get(p, p)} {m}" for p in partitions
                           for m in ("MAE ↓", "RMSE ↓", "Accuracy ↑")]
    rows = []
    for m in methods:
        row = [m]
        for p in partitions:
            r = index.get((m, p))
            if r is None:
                row += ["", "", ""]
                continue
            acc = r.overall.exact_accuracy if accuracy_mode == "per-element" else r.overall.exact_accuracy_per_sample
            row += [_fmt(r.overall.mae, digits), _fmt(r.overall.rmse, digits), _fmt(acc, digits)]
        rows.append(row)
    return header, rows


def per_target_rows(reports, digits: int = 2):
    partitions, methods, index = _grid(reports)
    targets = []
    for r in reports:
        for n in r.per_target:
            if n not in targets:
                targets.append(n)
    header = ["Metric", "Method"] + [f"{PARTITION_TITLES.get(p, p)} {m}" for p in partitions
                                     for m in ("MAE ↓", "RMSE ↓", "r ↑", "R² ↑")]
    rows = []
    for n in targets:
        for m in methods:
            row = [n, m]
            for p in partitions:
                r = index.get((m, p))
                tm = None if r is None else r.per_target.get(n)
                if tm is None:
                    row += ["", "", "", ""]
                    continue
                row += [_fmt(tm.mae, digits), _fmt(tm.rmse, digits), _fmt(tm.pearson_r, digits),
                        _fmt(tm.r2, digits)]
            rows.append(row)
    return header, rows


def _markdown(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _text(header, rows) -> str:
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    return "\n".join("  ".join(str(c).ljust(w) for c, w in zip(r, widths)) for r in [header] + rows)


def render_report(reports, fmt: str = "markdown", table: str = "both", accuracy_mode: str = "per-element",
                  digits: int = 2) -> str:
    """Overall and per-target tables. ``fmt`` is markdown, csv or text."""
    render = {"markdown": _markdown, "csv": _csv, "text": _text}.get(fmt)
    if render is None:
        raise ValueError(f"unknown report format {fmt!r}")
    parts = []
    if table in ("both", "overall"):
        parts.append(render(*overall_rows(reports, accuracy_mode, digits)))
    if table in ("both", "per_target"):
        parts.append(render(*per_target_rows(reports, digits)))
    sep = "\n" if fmt == "csv" else "\n\n"
    return sep.join(p.rstrip("\n") for p in parts) + "\n"


def write_report_files(reports, run_dir, accuracy_mode: str = "per-element") -> list[str]:
    """``<run>/<partition>_overall.csv`` and ``<run>/<partition>_per_target.csv`` for each partition."""
    os.makedirs(run_dir, exist_ok=True)
    by_part: dict[str, list[MetricsReport]] = {}
    for r in reports:
        by_part.setdefault(r.partition_name, []).append(r)
    paths = []
    for part, rs in by_part.items():
        for kind in ("overall", "per_target"):
            path = os.path.join(run_dir, f"{part}_{kind}.csv")
            with open(path, "w", newline="", encoding="utf-8") as fh:
                fh.write(render_report(rs, "csv", kind, accuracy_mode, digits=6))
            paths.append(path)
    return paths


def report_to_dict(r: MetricsReport) -> dict:
    return {
        "method": r.method, "partition": r.partition_name, "n_samples": r.n_samples,
        "overall": vars(r.overall).copy(),
        "per_target": {k: vars(v).copy() for k, v in r.per_target.items()},
    }


def report_from_dict(d: dict) -> MetricsReport:
    return MetricsReport(
        per_target={k: TargetMetrics(**v) for k, v in d["per_target"].items()},
        overall=OverallMetrics(**d["overall"]),
        partition_name=d["partition"], n_samples=d["n_samples"], method=d["method"],
    )
