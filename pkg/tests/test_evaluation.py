import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazescore.evaluation import (
    evaluate,
    exact_accuracy,
    fit_global_mean,
    mae,
    pearson_r,
    r_squared,
    render_report,
    report_from_dict,
    report_to_dict,
    rmse,
    round_half_away,
    rounded_ratings,
    write_report_files,
)

NAMES = ["OverDiff", "Mentally", "TiredEyes"]


def test_round_half_away_from_zero():
    assert list(round_half_away([0.5, 1.5, 2.5, -0.5, -2.5, 2.4999])) == [1, 2, 3, -1, -3, 2]


def test_rounded_ratings_clamp():
    assert list(rounded_ratings([-3.0, 0.4, 7.6, 12.0, 3.5])) == [1, 1, 7, 7, 4]


def test_accuracy_modes():
    pred = np.array([[1.2, 2.6, 7.4], [3.0, 3.0, 3.0]])
    target = np.array([[1, 3, 7], [3, 3, 4]])
    assert exact_accuracy(pred, target) == 5 / 6
    assert exact_accuracy(pred, target, "per-sample") == 0.5
    with pytest.raises(ValueError):
        exact_accuracy(pred, target, "bogus")


def test_perfect_prediction():
    y = np.array([1.0, 2, 5, 7])
    assert mae(y, y) == 0 and rmse(y, y) == 0
    assert pearson_r(y, y) == pytest.approx(1.0)
    assert r_squared(y, y) == 1.0


def test_undefined_statistics():
    const = np.full(5, 4.0)
    assert pearson_r(const, np.arange(5.0)) is None
    assert pearson_r(np.arange(5.0), const) is None
    assert r_squared(np.arange(5.0), const) is None


def test_shape_and_empty_checks():
    with pytest.raises(ValueError):
        mae(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        mae(np.zeros(0), np.zeros(0))
    with pytest.raises(ValueError):
        fit_global_mean(np.zeros((0, 3)))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-10, 10), st.integers(1, 7)), min_size=2, max_size=40))
def test_metrics_against_statistics_module(pairs):
    import statistics
    p = np.array([a for a, _ in pairs])
    t = np.array([float(b) for _, b in pairs])
    assert mae(p, t) == pytest.approx(statistics.fmean(abs(a - b) for a, b in zip(p, t)), abs=1e-9)
    assert rmse(p, t) == pytest.approx(math.sqrt(statistics.fmean((a - b) ** 2 for a, b in zip(p, t))), abs=1e-9)
    r = pearson_r(p, t)
    if len(set(p.tolist())) > 1 and len(set(t.tolist())) > 1 and r is not None:
        assert r == pytest.approx(statistics.correlation(p.tolist(), t.tolist()), abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 7), min_size=2, max_size=30))
def test_global_mean_r2_never_positive(labels):
    y = np.array(labels, dtype=float)
    base = fit_global_mean(y)
    r2 = r_squared(base.predict(len(y))[:, 0], y)
    assert r2 is None or r2 <= 1e-12


def _reports(rng):
    y = rng.integers(1, 8, size=(12, 3)).astype(float)
    base = fit_global_mean(y[:6])
    model = y + rng.normal(scale=0.4, size=y.shape)
    return [evaluate(base.predict(12), y, "round3", NAMES, "Global Mean"),
            evaluate(model, y, "round3", NAMES, "DenseNet"),
            evaluate(base.predict(12), y, "round4", NAMES, "Global Mean"),
            evaluate(model, y, "round4", NAMES, "DenseNet")]


def test_render_markdown_layout(rng):
    text = render_report(_reports(rng), "markdown")
    overall, per_target = text.split("\n\n")
    header = overall.splitlines()[0]
    assert "Round 3 MAE ↓" in header and "Round 4 Accuracy ↑" in header
    rows = overall.splitlines()[2:]
    assert rows[0].startswith("| Global Mean") and rows[1].startswith("| DenseNet")
    assert len(per_target.splitlines()) == 2 + 3 * 2
    assert "| - |" in per_target      # baseline Pearson r is undefined


def test_render_csv_and_text(rng):
    reports = _reports(rng)
    rows = list(csv.reader(render_report(reports, "csv", "overall").splitlines()))
    assert rows[0][0] == "Method" and len(rows) == 3
    assert "DenseNet" in render_report(reports, "text")
    with pytest.raises(ValueError):
        render_report(reports, "html")


def test_per_sample_accuracy_column(rng):
    reports = _reports(rng)
    a = render_report(reports, "csv", "overall", "per-element", digits=6)
    b = render_report(reports, "csv", "overall", "per-sample", digits=6)
    assert a != b


def test_report_files(tmp_path, rng):
    paths = write_report_files(_reports(rng), tmp_path / "run")
    assert sorted(p.rsplit("/", 1)[-1] for p in paths) == [
        "round3_overall.csv", "round3_per_target.csv", "round4_overall.csv", "round4_per_target.csv"]


def test_report_dict_round_trip(rng):
    for r in _reports(rng):
        assert report_from_dict(report_to_dict(r)) == r
