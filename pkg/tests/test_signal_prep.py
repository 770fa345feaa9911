import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gazescore.gaze_io import GazeRecording, RecordingId
from gazescore.signal_prep import (
    PrepConfig,
    SgFilterSpec,
    ShortRecordingError,
    SignalLengthError,
    VelocitySequence,
    crop,
    downsample,
    dump_stages,
    normalize,
    preprocess,
    sanitize,
    sg_derivative,
)

RID = RecordingId("007", 2, 1, "TEX")


def recording(n, x=None, y=None):
    t = np.arange(n, dtype=float)
    return GazeRecording(RID, t, np.zeros(n) if x is None else x, np.zeros(n) if y is None else y)


def test_crop_and_decimate_indices():
    n = 60_000
    rec = recording(n, x=np.arange(n, dtype=float))
    c = crop(rec)
    assert len(c) == 50_000
    d = downsample(c)
    assert len(d) == 5000
    assert np.array_equal(d.x[:3], [0, 10, 20])
    assert d.x[-1] == 49_990


def test_mean_downsample():
    rec = recording(40, x=np.arange(40, dtype=float))
    d = downsample(rec, 10, "mean")
    np.testing.assert_allclose(d.x, [4.5, 14.5, 24.5, 34.5])


def test_downsample_factor_one_is_identity():
    rec = recording(30, x=np.arange(30, dtype=float))
    assert np.array_equal(downsample(rec, 1).x, rec.x)
    with pytest.raises(ValueError):
        downsample(rec, 0)


def test_linear_ramp_velocity():
    # 1 deg per raw sample -> 100 deg/s after x10 decimation at 100 Hz
    n = 50_000
    seq = preprocess(recording(n, x=np.arange(n, dtype=float) * 0.1))
    assert seq.values.shape == (2, 5000) and seq.values.dtype == np.float32
    np.testing.assert_allclose(seq.values[0, 3:-3], math.sin(100 * math.pi / 2000), rtol=1e-6)
    assert np.all(seq.values[1] == 0)


def test_nan_window_becomes_zero():
    n = 50_000
    x = np.arange(n, dtype=float) * 0.1
    x[20_000:20_005] = np.nan           # one decimated sample at index 2000
    seq = preprocess(recording(n, x=x))
    v = seq.values[0]
    assert np.all(v[1997:2004] == 0)
    assert v[1996] != 0 and v[2004] != 0


def test_sg_requires_window_samples():
    with pytest.raises(SignalLengthError):
        sg_derivative(np.zeros(6))


def test_short_recording_policies():
    rec = recording(30_000, x=np.arange(30_000, dtype=float) * 0.01)
    with pytest.raises(ShortRecordingError):
        preprocess(rec)
    seq = preprocess(rec, PrepConfig(short_policy="pad"))
    assert seq.padded_steps == 2000
    assert np.all(seq.values[:, 3000:] == 0) and np.any(seq.values[0, :3000] != 0)


def test_too_short_for_the_filter():
    with pytest.raises(SignalLengthError):
        preprocess(recording(50), PrepConfig(short_policy="pad"))


def test_config_consistency():
    with pytest.raises(ValueError):
        PrepConfig(downsample_factor=5)
    PrepConfig(downsample_factor=5, sg=SgFilterSpec(dt=0.005))
    with pytest.raises(ValueError):
        SgFilterSpec(window=6)
    with pytest.raises(ValueError):
        PrepConfig(short_policy="truncate")


def test_sanitize():
    assert np.array_equal(sanitize(np.array([1.0, np.nan, np.inf, -np.inf])), [1, 0, 0, 0])


def test_velocity_sequence_validates_range():
    with pytest.raises(ValueError):
        VelocitySequence(np.full((2, 4), 1.5, np.float32), RID)
    with pytest.raises(ValueError):
        VelocitySequence(np.zeros((3, 4), np.float32), RID)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 50),
              elements=st.floats(allow_nan=True, allow_infinity=True, width=64)))
def test_normalize_bounded_after_sanitize(v):
    out = normalize(sanitize(v))
    assert np.all(np.isfinite(out)) and np.all(np.abs(out) <= 1)


@settings(max_examples=60, deadline=None)
@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4))
def test_normalize_is_odd_and_monotone(a, b):
    lo, hi = sorted((a, b))
    assert normalize(np.array([hi]))[0] >= normalize(np.array([lo]))[0]
    assert normalize(np.array([-a]))[0] == -normalize(np.array([a]))[0]


@settings(max_examples=25, deadline=None)
@given(st.integers(7, 200), st.floats(-100, 100), st.floats(-100, 100))
def test_constant_has_zero_derivative(n, c, _):
    assert np.all(sg_derivative(np.full(n, c)) == 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_preprocess_output_contract(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(50_000, 52_000))
    x = np.cumsum(r.normal(scale=0.5, size=n))
    y = np.cumsum(r.normal(scale=0.5, size=n))
    x[r.random(n) < 0.01] = np.nan
    seq = preprocess(recording(n, x, y))
    assert seq.values.shape == (2, 5000)
    assert np.all(np.isfinite(seq.values)) and np.abs(seq.values).max() <= 1


def test_dump_stages(tmp_path):
    n = 50_000
    paths = dump_stages(recording(n, x=np.arange(n) * 0.1), tmp_path / "stages")
    assert [p.rsplit("/", 1)[-1] for p in paths] == ["cropped.csv", "downsampled.csv", "velocity.csv",
                                                    "normalized.csv"]
    with open(paths[2]) as fh:
        assert fh.readline().strip() == "t,x,y"
        row = [float(v) for v in fh.readlines()[100].split(",")]
    assert row[1] == pytest.approx(100.0)
