"""Synthetic gaze recordings with a planted subject-level fatigue signal.

Each subject has a latent rating-scale fatigue value in [1, 7]. Higher
fatigue means fewer saccades per second and lower peak saccade velocity.
Ratings are an affine function of the per-recording latent plus noise,
rounded and clamped to the 1-7 scale.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .gaze_io import (
    TASKS,
    ColumnMap,
    GazeRecording,
    LabelSchema,
    LabelTable,
    LabelVector,
    PairedSample,
    QuestionnairePhase,
    RecordingId,
    align,
    sample_key,
    write_labels,
    write_manifest,
    write_recording,
)
from .signal_prep import PrepConfig, preprocess

RATE_HZ = 1000


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 40
    rounds: tuple[int, ...] = (2, 3, 4)
    sessions: tuple[int, ...] = (1, 2)
    tasks: tuple[str, ...] = ("TEX",)
    duration_s: float = 55.0
    saccade_rate: float = 2.0            # saccades / s at mid-scale fatigue
    rate_modulation: float = 0.8         # fractional rate change across the fatigue range
    peak_velocity_scale: float = 500.0   # deg / s
    velocity_modulation: float = 0.5
    min_fixation_s: float = 0.12
    field_deg: float = 12.0              # saccade targets drawn within +-field_deg
    noise_std: float = 0.02              # deg
    nan_blink_rate: float = 6.0          # blinks / minute
    blink_duration_s: tuple[float, float] = (0.1, 0.3)
    state_std: float = 0.4               # session-level latent jitter (rating units)
    task_std: float = 0.3                # recording-level latent jitter
    label_noise: float = 0.3
    label_rule: tuple[tuple[float, float], ...] | None = None   # (slope, intercept) per target
    p_missing_round: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("saccade_rate", "noise_std", "nan_blink_rate", "peak_velocity_scale",
                     "state_std", "task_std", "label_noise", "p_missing_round"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if any(t not in TASKS for t in self.tasks):
            raise ValueError(f"tasks must be drawn from {TASKS}")

    def rule_for(self, schema: LabelSchema) -> list[tuple[float, float]]:
        n = len(schema.target_names)
        if self.label_rule is None:
            return [(1.0, 0.0)] * n
        if len(self.label_rule) != n:
            raise ValueError(f"label_rule needs {n} (slope, intercept) pairs for {schema.name}")
        return list(self.label_rule)


def _fatigue_fraction(latent: float) -> float:
    return float(np.clip((latent - 1.0) / 6.0, 0.0, 1.0))


def _raised_cosine_step(u: np.ndarray) -> np.ndarray:
    """Position profile on u in [0, 1] whose derivative is 1 - cos(2 pi u)."""
    return u - np.sin(2 * np.pi * u) / (2 * np.pi)


def generate_recording(config: SynthConfig, rid: RecordingId, latent: float = 4.0,
                       rng: np.random.Generator | None = None) -> GazeRecording:
    """Fixations with Gaussian noise, raised-cosine saccades, NaN blink gaps."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    n = int(round(config.duration_s * RATE_HZ))
    t = np.arange(n, dtype=np.float64)
    f = _fatigue_fraction(latent)
    rate = config.saccade_rate * (1.0 + config.rate_modulation * (0.5 - f))
    vscale = config.peak_velocity_scale * (1.0 + config.velocity_modulation * (0.5 - f))
    pos = rng.uniform(-config.field_deg, config.field_deg, size=2)
    x = np.full(n, pos[0])
    y = np.full(n, pos[1])
    onset = 0.0
    while rate > 0:
        onset += config.min_fixation_s + rng.exponential(1.0 / rate)
        target = rng.uniform(-config.field_deg, config.field_deg, size=2)
        if onset >= config.duration_s:
            break
        delta = target - pos
        amp = float(np.hypot(*delta))
        if amp < 1e-9 or vscale == 0:
            continue
        # main-sequence-like saturation; raised cosine peaks at 2*amp/duration
        peak = vscale * (1.0 - np.exp(-amp / 14.0))
        dur = 2.0 * amp / peak
        i0 = int(np.ceil(onset * RATE_HZ))
        i1 = min(n, int(np.ceil((onset + dur) * RATE_HZ)))
        u = (t[i0:i1] / RATE_HZ - onset) / dur
        prof = _raised_cosine_step(np.clip(u, 0.0, 1.0))
        x[i0:i1] += delta[0] * prof
        y[i0:i1] += delta[1] * prof
        x[i1:] += delta[0]
        y[i1:] += delta[1]
        pos = target
    if config.noise_std > 0:
        x += rng.normal(0.0, config.noise_std, n)
        y += rng.normal(0.0, config.noise_std, n)
    if config.nan_blink_rate > 0:
        n_blinks = rng.poisson(config.nan_blink_rate * config.duration_s / 60.0)
        lo, hi = config.blink_duration_s
        for _ in range(n_blinks):
            start = int(rng.uniform(0, n))
            length = int(rng.uniform(lo, hi) * RATE_HZ)
            x[start:start + length] = np.nan
            y[start:start + length] = np.nan
    return GazeRecording(rid, t.copy(), x, y)


def _rate(latent: float, slope: float, intercept: float, noise: float) -> float:
    return float(np.clip(np.round(slope * latent + intercept + noise), 1, 7))


@dataclass
class SynthDataset:
    """Recordings plus both rating tables, with the latents that produced them."""

    recordings: list[GazeRecording] = field(default_factory=list)
    latents: dict[RecordingId, float] = field(default_factory=dict)
    subject_latent: dict[str, float] = field(default_factory=dict)
    known: LabelTable = field(default_factory=lambda: LabelTable(LabelSchema.KNOWN_SUBJECT_3))
    unknown: LabelTable = field(default_factory=lambda: LabelTable(LabelSchema.UNKNOWN_SUBJECT_6))

    def labels(self, schema: LabelSchema) -> LabelTable:
        return self.known if schema is LabelSchema.KNOWN_SUBJECT_3 else self.unknown


def generate_dataset(config: SynthConfig) -> SynthDataset:
    root = np.random.SeedSequence(config.seed)
    subj_ss, rec_ss, lab_ss = root.spawn(3)
    subj_rng = np.random.default_rng(subj_ss)
    lab_rng = np.random.default_rng(lab_ss)
    ds = SynthDataset()
    rules = {s: config.rule_for(s) for s in LabelSchema}
    rec_seeds = iter(rec_ss.spawn(config.n_subjects * len(config.rounds) * len(config.sessions) * len(config.tasks)))
    for si in range(config.n_subjects):
        subject = f"{si + 1:03d}"
        latent = float(subj_rng.uniform(1.0, 7.0))
        ds.subject_latent[subject] = latent
        present = [r for r in config.rounds if subj_rng.random() >= config.p_missing_round]
        if not present:
            present = [config.rounds[int(subj_rng.integers(len(config.rounds)))]]
        for rnd in config.rounds:
            for session in config.sessions:
                state = latent + subj_rng.normal(0.0, config.state_std)
                seeds = [next(rec_seeds) for _ in config.tasks]
                if rnd not in present:
                    continue
                phase = QuestionnairePhase.for_session(session)
                slabel = [_rate(state, a, b, lab_rng.normal(0.0, config.label_noise))
                          for a, b in rules[LabelSchema.UNKNOWN_SUBJECT_6]]
                ds.unknown.entries.append(((subject, rnd, phase.value),
                                           LabelVector(LabelSchema.UNKNOWN_SUBJECT_6, tuple(slabel))))
                for task, seed in zip(config.tasks, seeds):
                    rid = RecordingId(subject, rnd, session, task)
                    rec_latent = state + subj_rng.normal(0.0, config.task_std)
                    ds.latents[rid] = rec_latent
                    ds.recordings.append(generate_recording(config, rid, rec_latent, np.random.default_rng(seed)))
                    klabel = [_rate(rec_latent, a, b, lab_rng.normal(0.0, config.label_noise))
                              for a, b in rules[LabelSchema.KNOWN_SUBJECT_3]]
                    ds.known.entries.append((sample_key(rid, LabelSchema.KNOWN_SUBJECT_3),
                                             LabelVector(LabelSchema.KNOWN_SUBJECT_3, tuple(klabel))))
    return ds


def generate_labeled_dataset(config: SynthConfig, schema: LabelSchema = LabelSchema.KNOWN_SUBJECT_3,
                             prep: PrepConfig = PrepConfig()) -> list[PairedSample]:
    """Generate, preprocess and join; the result feeds the split builders directly."""
    ds = generate_dataset(config)
    seqs = [preprocess(r, prep) for r in ds.recordings]
    return align(seqs, ds.labels(schema)).samples


def write_dataset(config: SynthConfig, out_dir, column_map: ColumnMap = ColumnMap()) -> dict[str, str]:
    """Emit recordings, manifest and both rating tables in the formats gaze_io reads."""
    ds = generate_dataset(config)
    rec_dir = os.path.join(out_dir, "recordings")
    os.makedirs(rec_dir, exist_ok=True)
    entries = []
    for rec in ds.recordings:
        r = rec.id
        name = f"S_{r.round}{int(r.subject_id):03d}_S{r.session}_{r.task}.csv"
        write_recording(os.path.join(rec_dir, name), rec, column_map)
        entries.append((os.path.join("recordings", name), r))
    paths = {
        "manifest": os.path.join(out_dir, "manifest.csv"),
        "known_labels": os.path.join(out_dir, "labels_known_subject.csv"),
        "unknown_labels": os.path.join(out_dir, "labels_unknown_subject.csv"),
    }
    write_manifest(paths["manifest"], entries)
    write_labels(paths["known_labels"], LabelSchema.KNOWN_SUBJECT_3,
                 [(k, v.values) for k, v in ds.known.entries])
    write_labels(paths["unknown_labels"], LabelSchema.UNKNOWN_SUBJECT_6,
                 [(k, v.values) for k, v in ds.unknown.entries])
    return paths
