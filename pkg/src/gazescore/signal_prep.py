"""Gaze position -> normalized velocity.

The chain is crop -> downsample -> Savitzky-Golay derivative per channel
-> zero non-finite samples -> clip and sine-normalize, in that order.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .gaze_io import GazeRecording, RecordingId

NOMINAL_RATE_HZ = 1000
SEQUENCE_LENGTH = 5000
VELOCITY_CLIP = 1000.0


class SignalLengthError(ValueError):
    pass


class ShortRecordingError(SignalLengthError):
    pass


@dataclass(frozen=True)
class SgFilterSpec:
    window: int = 7
    polyorder: int = 2
    derivative_order: int = 1
    dt: float = 0.01

    def __post_init__(self):
        if self.window < 1 or self.window % 2 != 1:
            raise ValueError("window must be a positive odd integer")
        if not 0 <= self.polyorder < self.window:
            raise ValueError("polyorder must satisfy 0 <= polyorder < window")
        if not 0 <= self.derivative_order <= self.polyorder:
            raise ValueError("derivative_order must not exceed polyorder")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True)
class PrepConfig:
    duration_s: float = 50.0
    downsample_factor: int = 10
    downsample_mode: str = "decimate"   # or "mean"
    short_policy: str = "drop"          # or "pad"
    sequence_length: int = SEQUENCE_LENGTH
    sg: SgFilterSpec = SgFilterSpec()

    def __post_init__(self):
        if self.downsample_mode not in ("decimate", "mean"):
            raise ValueError(f"unknown downsample mode {self.downsample_mode!r}")
        if self.short_policy not in ("drop", "pad"):
            raise ValueError(f"unknown short-recording policy {self.short_policy!r}")
        if not math.isclose(self.sg.dt, self.downsample_factor / NOMINAL_RATE_HZ):
            raise ValueError("sg.dt must equal the post-downsampling sample interval")


@dataclass(frozen=True)
class VelocitySequence:
    values: np.ndarray          # (2, sequence_length), float32, in [-1, 1]
    source_id: RecordingId
    sample_rate: float = 100.0
    padded_steps: int = 0

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != 2:
            raise ValueError(f"velocity sequence must be (2, L), got {v.shape}")
        if not np.all(np.isfinite(v)) or np.abs(v).max(initial=0.0) > 1.0:
            raise ValueError("velocity sequence values must be finite and within [-1, 1]")


def crop(rec: GazeRecording, duration_s: float = 50.0) -> GazeRecording:
    n = int(round(duration_s * NOMINAL_RATE_HZ))
    return replace(rec, timestamps=rec.timestamps[:n], x=rec.x[:n], y=rec.y[:n])


def _decimate(a: np.ndarray, factor: int, mode: str) -> np.ndarray:
    if mode == "decimate":
        return a[::factor]
    n = len(a) // factor
    return a[:n * factor].reshape(n, factor).mean(axis=1)


def downsample(rec: GazeRecording, factor: int = 10, mode: str = "decimate") -> GazeRecording:
    """Keep every ``factor``-th sample from index 0 (or block means with mode="mean")."""
    if factor < 1:
        raise ValueError(f"downsample factor must be >= 1, got {factor}")
    x, y = _decimate(rec.x, factor, mode), _decimate(rec.y, factor, mode)
    return replace(rec, timestamps=rec.timestamps[::factor][:len(x)], x=x, y=y)


def sg_coefficients(spec: SgFilterSpec = SgFilterSpec()) -> np.ndarray:
    """Correlation weights c with sum_i c[i] * p[t + i - half] ~ d^m p / dt^m at t."""
    half = spec.window // 2
    z = np.arange(-half, half + 1, dtype=np.float64)
    A = np.vander(z, spec.polyorder + 1, increasing=True)
    # least-squares polynomial coefficients are pinv(A) @ p; row m gives the m-th derivative / m!
    try:
        pinv = np.linalg.solve(A.T @ A, A.T)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError("singular Savitzky-Golay design matrix") from exc
    m = spec.derivative_order
    c = pinv[m] * math.factorial(m) / spec.dt ** m
    # the weights are exactly even (m even) or odd (m odd) about the centre; enforce it
    return 0.5 * (c + (-1) ** m * c[::-1])


def sg_derivative(positions: np.ndarray, spec: SgFilterSpec = SgFilterSpec()) -> np.ndarray:
    """Apply the SG filter with edge replication; any NaN in a window gives NaN."""
    p = np.asarray(positions, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("sg_derivative expects a single channel")
    if len(p) < spec.window:
        raise SignalLengthError(f"signal of length {len(p)} is shorter than the SG window {spec.window}")
    half = spec.window // 2
    padded = np.pad(p, half, mode="edge")
    w = np.lib.stride_tricks.sliding_window_view(padded, spec.window)
    c = sg_coefficients(spec)
    # pair taps symmetric about the centre so odd derivatives of a constant are exactly zero
    right, left = w[:, half + 1:], w[:, half - 1::-1] if half else w[:, :0]
    if spec.derivative_order % 2:
        out = (right - left) @ c[half + 1:]
    else:
        out = w[:, half] * c[half] + (right + left) @ c[half + 1:]
    # the centre weight of an odd derivative is zero, so NaN there must be propagated explicitly
    out[np.isnan(w).any(axis=1)] = np.nan
    return out


def sanitize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.where(np.isfinite(v), v, 0.0)


def normalize(v: np.ndarray) -> np.ndarray:
    """sin of the clipped velocity rescaled to +-90 degrees."""
    clipped = np.clip(np.asarray(v, dtype=np.float64), -VELOCITY_CLIP, VELOCITY_CLIP)
    return np.sin(np.deg2rad(clipped * (90.0 / VELOCITY_CLIP)))


def preprocess(rec: GazeRecording, config: PrepConfig = PrepConfig()) -> VelocitySequence:
    cropped = crop(rec, config.duration_s)
    ds = downsample(cropped, config.downsample_factor, config.downsample_mode)
    n = len(ds.x)
    if n < config.sg.window:
        raise SignalLengthError(f"{rec.id}: {n} samples after downsampling, SG window needs {config.sg.window}")
    L = config.sequence_length
    if n < L and config.short_policy == "drop":
        raise ShortRecordingError(f"{rec.id}: {n} of {L} steps after downsampling")
    chans = [normalize(sanitize(sg_derivative(c, config.sg))) for c in (ds.x, ds.y)]
    values = np.zeros((2, L), dtype=np.float32)
    k = min(n, L)
    values[0, :k] = chans[0][:k]
    values[1, :k] = chans[1][:k]
    rate = NOMINAL_RATE_HZ / config.downsample_factor
    return VelocitySequence(values, rec.id, rate, padded_steps=L - k)


def dump_stages(rec: GazeRecording, out_dir, config: PrepConfig = PrepConfig()) -> list[str]:
    """Write each intermediate stage as t,x,y CSV for inspection."""
    os.makedirs(out_dir, exist_ok=True)
    cropped = crop(rec, config.duration_s)
    ds = downsample(cropped, config.downsample_factor, config.downsample_mode)
    vel = [sg_derivative(c, config.sg) for c in (ds.x, ds.y)]
    norm = [normalize(sanitize(v)) for v in vel]
    stages = {
        "cropped": (cropped.timestamps, cropped.x, cropped.y),
        "downsampled": (ds.timestamps, ds.x, ds.y),
        "velocity": (ds.timestamps, vel[0], vel[1]),
        "normalized": (ds.timestamps, norm[0], norm[1]),
    }
    paths = []
    for name, (t, x, y) in stages.items():
        path = os.path.join(out_dir, f"{name}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y"])
            w.writerows(zip(t.tolist(), x.tolist(), y.tolist()))
        paths.append(path)
    return paths
