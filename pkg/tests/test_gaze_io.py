import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazescore.gaze_io import (
    AmbiguousLabelError,
    ColumnMap,
    GazeRecording,
    LabelSchema,
    LabelSchemaError,
    LabelTable,
    LabelVector,
    PairedSample,
    QuestionnairePhase,
    RecordingId,
    RecordingParseError,
    SplitConfigError,
    align,
    build_split_known_subject,
    build_split_unknown_subject,
    load_labels,
    load_manifest,
    load_recording,
    parse_recording_id,
    sample_key,
    subject_ids,
    write_recording,
)
from gazescore.signal_prep import VelocitySequence

K3, U6 = LabelSchema.KNOWN_SUBJECT_3, LabelSchema.UNKNOWN_SUBJECT_6


def write(path, text):
    path.write_text(text)
    return path


def seq(rid):
    return VelocitySequence(np.zeros((2, 4), np.float32), rid)


def test_parse_recording_id_from_filename():
    rid = parse_recording_id("/data/S_2017_S1_TEX.csv")
    assert rid == RecordingId("017", 2, 1, "TEX")
    with pytest.raises(RecordingParseError):
        parse_recording_id("recording.csv")


def test_recording_id_validation():
    with pytest.raises(ValueError):
        RecordingId("001", 2, 3, "TEX")
    with pytest.raises(ValueError):
        RecordingId("001", 2, 1, "XYZ")


def test_load_recording_with_nan_fields(tmp_path):
    p = write(tmp_path / "S_2001_S1_TEX.csv", "n,x,y\n0,1.5,2\n1,,3\n2,NaN,4\n3,2,5\n")
    rec = load_recording(p)
    assert rec.id == RecordingId("001", 2, 1, "TEX")
    assert np.array_equal(rec.timestamps, [0, 1, 2, 3])
    assert np.isnan(rec.x[1]) and np.isnan(rec.x[2]) and rec.x[3] == 2


def test_load_recording_reports_line_numbers(tmp_path):
    p = write(tmp_path / "S_2001_S1_TEX.csv", "n,x,y\n0,1,2\n1,abc,3\n")
    with pytest.raises(RecordingParseError, match=":3"):
        load_recording(p)


def test_load_recording_needs_columns(tmp_path):
    p = write(tmp_path / "S_2001_S1_TEX.csv", "t,x\n0,1\n")
    with pytest.raises(RecordingParseError):
        load_recording(p)


def test_custom_column_map(tmp_path):
    p = write(tmp_path / "whatever.tsv", "time\tgx\tgy\n0\t1\t2\n1\t3\t4\n")
    cm = ColumnMap(timestamp="time", x="gx", y="gy", delimiter="\t")
    rec = load_recording(p, cm, recording_id=RecordingId("003", 4, 2, "BLG"))
    assert np.array_equal(rec.y, [2, 4])


def test_recording_round_trip(tmp_path, rng):
    rid = RecordingId("004", 3, 2, "TEX")
    x = rng.normal(size=20)
    x[5] = np.nan
    rec = GazeRecording(rid, np.arange(20.0), x, rng.normal(size=20))
    path = tmp_path / "S_3004_S2_TEX.csv"
    write_recording(path, rec)
    back = load_recording(path)
    # positions are written with 6 decimals
    np.testing.assert_allclose(back.x, rec.x, rtol=0, atol=5e-7)
    np.testing.assert_allclose(back.y, rec.y, rtol=0, atol=5e-7)
    assert np.isnan(back.x[5])


def test_manifest_resolves_relative_paths(tmp_path):
    m = write(tmp_path / "m.csv", "path,subject,round,session,task\nrec/a.csv,001,2,1,TEX\n/abs/b.csv,002,3,2,TEX\n")
    entries = load_manifest(m)
    assert entries[0][0] == str(tmp_path / "rec" / "a.csv")
    assert entries[1] == ("/abs/b.csv", RecordingId("002", 3, 2, "TEX"))


def test_known_labels_drop_bad_rows(tmp_path):
    p = write(tmp_path / "k.csv", "subject,round,session,task,OverDiff,Mentally,TiredEyes\n"
                                  "001,2,1,TEX,3,4,5\n001,2,2,TEX,,4,5\n002,2,1,TEX,9,1,1\n")
    table = load_labels(p, K3)
    assert len(table.entries) == 1 and table.dropped == 2
    assert table.entries[0][0] == ("001", 2, 1, "TEX")


def test_label_schema_mismatch(tmp_path):
    p = write(tmp_path / "k.csv", "subject,round,session,task,OverDiff\n001,2,1,TEX,3\n")
    with pytest.raises(LabelSchemaError):
        load_labels(p, K3)


def test_survey_labels_by_phase_or_session(tmp_path):
    names = ",".join(U6.target_names)
    by_phase = write(tmp_path / "a.csv", f"subject,round,phase,{names}\n001,1,between,1,2,3,4,5,6\n")
    by_session = write(tmp_path / "b.csv", f"subject,round,session,{names}\n001,1,2,1,2,3,4,5,6\n")
    assert load_labels(by_phase, U6).entries[0][0] == ("001", 1, "between")
    assert load_labels(by_session, U6).entries[0][0] == ("001", 1, "after")


def test_session_phase_mapping():
    assert QuestionnairePhase.for_session(1) is QuestionnairePhase.BETWEEN_SESSIONS
    assert QuestionnairePhase.for_session(2) is QuestionnairePhase.AFTER_SESSIONS


def test_align_inner_join():
    rids = [RecordingId("001", 2, 1, "TEX"), RecordingId("002", 2, 1, "TEX")]
    table = LabelTable(K3, [(sample_key(rids[0], K3), LabelVector(K3, (1, 2, 3))),
                            (("009", 2, 1, "TEX"), LabelVector(K3, (1, 2, 3)))])
    res = align([seq(r) for r in rids], table)
    assert [s.id for s in res.samples] == [rids[0]]
    assert res.unmatched_recordings == [rids[1]]
    assert res.unmatched_labels == [("009", 2, 1, "TEX")]


def test_align_survey_labels_shared_across_tasks():
    rids = [RecordingId("001", 1, 2, t) for t in ("TEX", "BLG")]
    table = LabelTable(U6, [(("001", 1, "after"), LabelVector(U6, (1, 2, 3, 4, 5, 6)))])
    res = align([seq(r) for r in rids], table)
    assert len(res.samples) == 2
    assert all(s.questionnaire_phase is QuestionnairePhase.AFTER_SESSIONS for s in res.samples)


def test_align_duplicate_keys():
    key = ("001", 2, 1, "TEX")
    table = LabelTable(K3, [(key, LabelVector(K3, (1, 1, 1))), (key, LabelVector(K3, (2, 2, 2)))])
    with pytest.raises(AmbiguousLabelError):
        align([], table)


def make_samples(schema, layout):
    """layout: {subject: [rounds]}; two sessions per round."""
    out = []
    for subj, rounds in layout.items():
        for rnd in rounds:
            for sess in (1, 2):
                rid = RecordingId(subj, rnd, sess, "TEX")
                if schema is K3:
                    phase, values = QuestionnairePhase.PER_SESSION_TASK, (1, 2, 3)
                else:
                    phase, values = QuestionnairePhase.for_session(sess), (1, 2, 3, 4, 5, 6)
                out.append(PairedSample(seq(rid), LabelVector(schema, values), rid, phase))
    return out


def test_unknown_split_symmetric_difference():
    layout = {"001": [1, 2], "002": [1], "003": [2], "004": [1], "005": [2], "006": [1, 2], "007": [3]}
    split = build_split_unknown_subject(make_samples(U6, layout), seed=0)
    tested = subject_ids(split.test["between"]) | subject_ids(split.test["after"])
    assert tested == {"001", "006"}
    assert subject_ids(split.train) | subject_ids(split.val) == {"002", "003", "004", "005"}
    assert len(subject_ids(split.val)) == 1
    assert {s.questionnaire_phase for s in split.test["between"]} == {QuestionnairePhase.BETWEEN_SESSIONS}


def test_unknown_split_needs_both_groups():
    with pytest.raises(SplitConfigError):
        build_split_unknown_subject(make_samples(U6, {"001": [1], "002": [2]}))
    with pytest.raises(SplitConfigError):
        build_split_unknown_subject(make_samples(U6, {"001": [1, 2]}))


def test_known_split_partitions():
    layout = {f"{i:03d}": [2, 3, 4] for i in range(10)}
    split = build_split_known_subject(make_samples(K3, layout), seed=0)
    assert len(split.train) == 16 and len(split.val) == 4
    assert {s.id.round for s in split.train + split.val} == {2}
    assert [len(v) for v in split.test.values()] == [20, 20]
    one = build_split_known_subject(make_samples(K3, layout), seed=0, sessions=(1,))
    assert {s.id.session for s in one.train} == {1}


def test_known_split_schema_check():
    with pytest.raises(SplitConfigError):
        build_split_known_subject(make_samples(U6, {"001": [2]}))


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.sampled_from([f"{i:03d}" for i in range(25)]),
                       st.lists(st.sampled_from([1, 2]), min_size=1, max_size=2, unique=True), min_size=2),
       st.integers(0, 1000))
def test_unknown_split_no_leak_property(layout, seed):
    samples = make_samples(U6, layout)
    try:
        split = build_split_unknown_subject(samples, seed=seed)
    except SplitConfigError:
        return
    seen = subject_ids(split.train) | subject_ids(split.val)
    tested = subject_ids(split.test["between"]) | subject_ids(split.test["after"])
    assert not seen & tested
    assert len(split.train) + len(split.val) + len(split.test["between"]) + len(split.test["after"]) == len(samples)
