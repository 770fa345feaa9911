"""Recording and rating-table adapters, sample alignment, experiment splits."""
from __future__ import annotations

import csv
import logging
import math
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .signal_prep import VelocitySequence

log = logging.getLogger(__name__)

TASKS = ("FXS", "HSS", "RAN", "TEX", "VD1", "VD2", "BLG")
RATING_MIN, RATING_MAX = 1, 7


class RecordingParseError(ValueError):
    pass


class LabelSchemaError(ValueError):
    pass


class AmbiguousLabelError(ValueError):
    pass


class SplitConfigError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class RecordingId:
    subject_id: str
    round: int
    session: int
    task: str

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task code {self.task!r}; expected one of {TASKS}")
        if self.round < 1:
            raise ValueError(f"round must be >= 1, got {self.round}")
        if self.session not in (1, 2):
            raise ValueError(f"session must be 1 or 2, got {self.session}")

    def __str__(self):
        return f"{self.subject_id}/r{self.round}/s{self.session}/{self.task}"


@dataclass(frozen=True)
class GazeRecording:
    id: RecordingId
    timestamps: np.ndarray   # ms
    x: np.ndarray            # degrees, NaN where missing
    y: np.ndarray

    def __post_init__(self):
        if not (len(self.timestamps) == len(self.x) == len(self.y)):
            raise ValueError("timestamps, x and y must have equal length")

    def __len__(self):
        return len(self.x)


class LabelSchema(Enum):
    KNOWN_SUBJECT_3 = ("OverDiff", "Mentally", "TiredEyes")
    UNKNOWN_SUBJECT_6 = ("general_comfort", "shoulder_fatigue", "neck_fatigue",
                         "eye_fatigue", "physical_effort", "mental_effort")

    @property
    def target_names(self) -> tuple[str, ...]:
        return self.value


class QuestionnairePhase(Enum):
    PER_SESSION_TASK = "task"
    BETWEEN_SESSIONS = "between"
    AFTER_SESSIONS = "after"

    @classmethod
    def for_session(cls, session: int) -> "QuestionnairePhase":
        # the between-session survey follows session 1, the after-session survey follows session 2
        return cls.BETWEEN_SESSIONS if session == 1 else cls.AFTER_SESSIONS


@dataclass(frozen=True)
class LabelVector:
    schema: LabelSchema
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != len(self.schema.target_names):
            raise ValueError(f"{self.schema.name} needs {len(self.schema.target_names)} values")
        if any(not (RATING_MIN <= v <= RATING_MAX) for v in self.values):
            raise ValueError(f"ratings must lie in [{RATING_MIN}, {RATING_MAX}]: {self.values}")

    @property
    def target_names(self) -> tuple[str, ...]:
        return self.schema.target_names


@dataclass(frozen=True)
class PairedSample:
    input: "VelocitySequence"
    label: LabelVector
    id: RecordingId
    questionnaire_phase: QuestionnairePhase

    def __post_init__(self):
        per_task = self.questionnaire_phase is QuestionnairePhase.PER_SESSION_TASK
        if per_task != (self.label.schema is LabelSchema.KNOWN_SUBJECT_3):
            raise ValueError("label schema does not match questionnaire phase")


@dataclass(frozen=True)
class DatasetSplit:
    train: list[PairedSample]
    val: list[PairedSample]
    test: dict[str, list[PairedSample]]

    @property
    def schema(self) -> LabelSchema:
        return self.train[0].label.schema


# ---------------------------------------------------------------------------
# recordings


DEFAULT_FILENAME_PATTERN = r"S_(?P<round>\d)(?P<subject>\d{3})_S(?P<session>\d)_(?P<task>[A-Z0-9]{3})"


@dataclass(frozen=True)
class ColumnMap:
    timestamp: str = "n"
    x: str = "x"
    y: str = "y"
    validity: str | None = None
    valid_value: float = 0.0          # rows whose validity column differs are invalid
    delimiter: str = ","
    filename_pattern: str = DEFAULT_FILENAME_PATTERN


def _parse_float(text: str, path, line: int, column: str) -> float:
    text = text.strip()
    if text == "" or text.lower() == "nan":
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise RecordingParseError(f"{path}:{line}: column {column!r}: not a number: {text!r}") from None


def parse_recording_id(path, pattern: str = DEFAULT_FILENAME_PATTERN) -> RecordingId:
    name = os.path.basename(str(path))
    m = re.search(pattern, name)
    if m is None:
        raise RecordingParseError(f"{path}: cannot parse recording identity from file name")
    return RecordingId(m.group("subject"), int(m.group("round")), int(m.group("session")), m.group("task"))


def load_recording(path, column_map: ColumnMap = ColumnMap(), recording_id: RecordingId | None = None
                   ) -> GazeRecording:
    """Read one recording CSV. Missing fields and invalid rows become NaN."""
    rid = recording_id or parse_recording_id(path, column_map.filename_pattern)
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=column_map.delimiter)
        header = next(reader, None)
        if header is None:
            raise RecordingParseError(f"{path}:1: empty file")
        header = [h.strip() for h in header]
        wanted = [column_map.timestamp, column_map.x, column_map.y]
        if column_map.validity:
            wanted.append(column_map.validity)
        missing = [c for c in wanted if c not in header]
        if missing:
            raise RecordingParseError(f"{path}: missing mapped column(s) {missing}; header is {header}")
        idx = [header.index(c) for c in wanted]
        rows = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise RecordingParseError(f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
            rows.append([_parse_float(row[i], path, line, c) for i, c in zip(idx, wanted)])
    if not rows:
        raise RecordingParseError(f"{path}: no data rows")
    data = np.array(rows, dtype=np.float64)
    t, x, y = data[:, 0], data[:, 1].copy(), data[:, 2].copy()
    if np.any(~np.isfinite(t)) or np.any(np.diff(t) <= 0):
        raise RecordingParseError(f"{path}: timestamps must be finite and strictly increasing")
    if column_map.validity:
        bad = data[:, 3] != column_map.valid_value
        x[bad] = np.nan
        y[bad] = np.nan
    return GazeRecording(rid, t, x, y)


def write_recording(path, rec: GazeRecording, column_map: ColumnMap = ColumnMap()) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=column_map.delimiter)
        w.writerow([column_map.timestamp, column_map.x, column_map.y])
        for t, x, y in zip(rec.timestamps.tolist(), rec.x.tolist(), rec.y.tolist()):
            w.writerow([repr(t) if t != int(t) else int(t),
                        "NaN" if math.isnan(x) else f"{x:.6f}",
                        "NaN" if math.isnan(y) else f"{y:.6f}"])


MANIFEST_COLUMNS = ("path", "subject", "round", "session", "task")


def load_manifest(path) -> list[tuple[str, RecordingId]]:
    """Manifest rows: path,subject,round,session,task. Relative paths resolve against the manifest."""
    base = os.path.dirname(os.path.abspath(path))
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(MANIFEST_COLUMNS) - set(reader.fieldnames):
            raise RecordingParseError(f"{path}: manifest needs columns {MANIFEST_COLUMNS}")
        for line, row in enumerate(reader, start=2):
            try:
                rid = RecordingId(row["subject"], int(row["round"]), int(row["session"]), row["task"])
            except (TypeError, ValueError) as exc:
                raise RecordingParseError(f"{path}:{line}: {exc}") from None
            p = row["path"]
            out.append((p if os.path.isabs(p) else os.path.join(base, p), rid))
    return out


def write_manifest(path, entries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_COLUMNS)
        for p, rid in entries:
            w.writerow([p, rid.subject_id, rid.round, rid.session, rid.task])


# ---------------------------------------------------------------------------
# labels

KnownKey = tuple  # (subject, round, session, task)
PhaseKey = tuple  # (subject, round, phase)


@dataclass
class LabelTable:
    schema: LabelSchema
    entries: list[tuple[tuple, LabelVector]] = field(default_factory=list)
    dropped: int = 0


def load_labels(path, schema: LabelSchema, delimiter: str = ",") -> LabelTable:
    """Read a rating table; rows with a missing or out-of-range rating are dropped and counted.

    Known-subject tables are keyed by subject, round, session, task. Survey
    tables are keyed by subject, round and either ``phase`` (between/after)
    or ``session`` (1 -> between, 2 -> after).
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        cols = [c.strip() for c in (reader.fieldnames or [])]
        reader.fieldnames = cols
        names = schema.target_names
        if schema is LabelSchema.KNOWN_SUBJECT_3:
            keys = ["subject", "round", "session", "task"]
        else:
            keys = ["subject", "round", "phase" if "phase" in cols else "session"]
        missing = [c for c in keys + list(names) if c not in cols]
        if missing:
            raise LabelSchemaError(f"{path}: columns {missing} required for {schema.name}; found {cols}")
        table = LabelTable(schema)
        for line, row in enumerate(reader, start=2):
            try:
                values = tuple(float(row[n]) for n in names)
            except (TypeError, ValueError):
                values = None
            if values is None or any(not (RATING_MIN <= v <= RATING_MAX) for v in values):
                table.dropped += 1
                log.warning("%s:%d: dropping row with missing or out-of-range rating", path, line)
                continue
            try:
                key = _label_key(row, schema, keys[-1])
            except ValueError as exc:
                raise LabelSchemaError(f"{path}:{line}: {exc}") from None
            table.entries.append((key, LabelVector(schema, values)))
    return table


def _label_key(row, schema: LabelSchema, last: str) -> tuple:
    subject, rnd = row["subject"].strip(), int(row["round"])
    if schema is LabelSchema.KNOWN_SUBJECT_3:
        rid = RecordingId(subject, rnd, int(row["session"]), row["task"].strip())
        return (rid.subject_id, rid.round, rid.session, rid.task)
    if last == "phase":
        phase = QuestionnairePhase(row["phase"].strip().lower())
        if phase is QuestionnairePhase.PER_SESSION_TASK:
            raise ValueError("survey tables need phase 'between' or 'after'")
    else:
        phase = QuestionnairePhase.for_session(int(row["session"]))
    return (subject, rnd, phase.value)


def write_labels(path, schema: LabelSchema, rows) -> None:
    """rows: iterable of (key tuple, values) with the same key layout load_labels produces."""
    names = list(schema.target_names)
    head = ["subject", "round", "session", "task"] if schema is LabelSchema.KNOWN_SUBJECT_3 else [
        "subject", "round", "phase"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(head + names)
        for key, values in rows:
            w.writerow(list(key) + [int(v) if float(v).is_integer() else v for v in values])


def sample_key(rid: RecordingId, schema: LabelSchema) -> tuple:
    if schema is LabelSchema.KNOWN_SUBJECT_3:
        return (rid.subject_id, rid.round, rid.session, rid.task)
    return (rid.subject_id, rid.round, QuestionnairePhase.for_session(rid.session).value)


@dataclass
class AlignResult:
    samples: list[PairedSample]
    unmatched_recordings: list[RecordingId]
    unmatched_labels: list[tuple]


def align(recordings: list["VelocitySequence"], labels: LabelTable) -> AlignResult:
    """Inner join of preprocessed recordings with rating rows."""
    counts = Counter(k for k, _ in labels.entries)
    dup = [k for k, c in counts.items() if c > 1]
    if dup:
        raise AmbiguousLabelError(f"duplicate label rows for key {dup[0]}")
    by_key = dict(labels.entries)
    used = set()
    samples, unmatched = [], []
    for seq in recordings:
        key = sample_key(seq.source_id, labels.schema)
        lab = by_key.get(key)
        if lab is None:
            unmatched.append(seq.source_id)
            continue
        used.add(key)
        phase = (QuestionnairePhase.PER_SESSION_TASK if labels.schema is LabelSchema.KNOWN_SUBJECT_3
                 else QuestionnairePhase.for_session(seq.source_id.session))
        samples.append(PairedSample(seq, lab, seq.source_id, phase))
    unused = [k for k in by_key if k not in used]
    if unmatched or unused:
        log.warning("align: %d recordings without labels, %d label rows without recordings",
                    len(unmatched), len(unused))
    return AlignResult(samples, unmatched, unused)


# ---------------------------------------------------------------------------
# splits


def _n_val(n: int, fraction: float) -> int:
    if n < 2:
        return 0
    return min(max(int(round(n * fraction)), 1), n - 1)


def build_split_known_subject(samples: list[PairedSample], val_fraction: float = 0.2, seed: int = 0,
                              sessions: tuple[int, ...] = (1, 2), train_round: int = 2,
                              test_rounds: tuple[int, ...] = (3, 4)) -> DatasetSplit:
    """Sample-level split: train/val from one round, one test partition per later round."""
    if any(s.label.schema is not LabelSchema.KNOWN_SUBJECT_3 for s in samples):
        raise SplitConfigError("known-subject split needs KnownSubject3 labels")
    pool = sorted((s for s in samples if s.id.round == train_round and s.id.session in sessions),
                  key=lambda s: s.id)
    if not pool:
        raise SplitConfigError(f"no round-{train_round} samples to train on")
    order = np.random.default_rng(seed).permutation(len(pool))
    n_val = _n_val(len(pool), val_fraction)
    val = [pool[i] for i in order[:n_val]]
    train = [pool[i] for i in order[n_val:]]
    test = {f"round{r}": sorted((s for s in samples if s.id.round == r and s.id.session in sessions),
                                key=lambda s: s.id) for r in test_rounds}
    return DatasetSplit(train, val, test)


def build_split_unknown_subject(samples: list[PairedSample], val_fraction: float = 0.2, seed: int = 0,
                                rounds: tuple[int, int] = (1, 2)) -> DatasetSplit:
    """Subject-level split. Subjects seen in both rounds are the test set;
    subjects seen in exactly one round form the train/val pool."""
    if any(s.label.schema is not LabelSchema.UNKNOWN_SUBJECT_6 for s in samples):
        raise SplitConfigError("unknown-subject split needs UnknownSubject6 labels")
    r1, r2 = rounds
    in_r1 = {s.id.subject_id for s in samples if s.id.round == r1}
    in_r2 = {s.id.subject_id for s in samples if s.id.round == r2}
    test_subjects = in_r1 & in_r2
    pool_subjects = sorted(in_r1 ^ in_r2)
    if not test_subjects:
        raise SplitConfigError(f"no subject appears in both round {r1} and round {r2}")
    if not pool_subjects:
        raise SplitConfigError(f"no subject appears in exactly one of rounds {r1}, {r2}")
    order = np.random.default_rng(seed).permutation(len(pool_subjects))
    n_val = _n_val(len(pool_subjects), val_fraction)
    val_subjects = {pool_subjects[i] for i in order[:n_val]}
    eligible = sorted((s for s in samples if s.id.round in rounds), key=lambda s: s.id)
    train = [s for s in eligible if s.id.subject_id in pool_subjects and s.id.subject_id not in val_subjects]
    val = [s for s in eligible if s.id.subject_id in val_subjects]
    tested = [s for s in eligible if s.id.subject_id in test_subjects]
    test = {
        "between": [s for s in tested if s.questionnaire_phase is QuestionnairePhase.BETWEEN_SESSIONS],
        "after": [s for s in tested if s.questionnaire_phase is QuestionnairePhase.AFTER_SESSIONS],
    }
    return DatasetSplit(train, val, test)


def subject_ids(samples) -> set[str]:
    return {s.id.subject_id for s in samples}
