import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from osacnn.cohort import SeverityLabel
from osacnn.edf import SignalTrace
from osacnn.pipeline import (
    GROUPS,
    ChannelGroup,
    PipelineError,
    SegmentTensor,
    SleepWindow,
    SubjectWindows,
    assemble,
    build_tensor,
    load_tensor,
    normalize,
    read_sleep_windows,
    save_tensor,
    segment,
    trim_awake,
)


def _trace(n, rate=256.0):
    return SignalTrace("ECG1", rate, np.arange(n, dtype=np.float64))


def test_trim_identity():
    trace = _trace(1000, 10.0)
    out = trim_awake(trace, SleepWindow("a", 0.0, 100.0))
    np.testing.assert_array_equal(out.samples, trace.samples)


def test_trim_full_night_lengths():
    ten_hours = SignalTrace("ECG1", 256.0, np.zeros(10 * 3600 * 256, dtype=np.float32))
    # 8.24 h exactly
    assert len(trim_awake(ten_hours, SleepWindow("a", 3600.0, 33264.0)).samples) == 7_593_984
    # the reported 7,595,520 samples is 29,670 s of sleep
    assert len(trim_awake(ten_hours, SleepWindow("a", 3600.0, 33270.0)).samples) == 7_595_520


def test_trim_floors_to_samples():
    out = trim_awake(_trace(100, 10.0), SleepWindow("a", 0.25, 5.99))
    np.testing.assert_array_equal(out.samples, np.arange(2, 59))


@pytest.mark.parametrize("window", [SleepWindow("a", 3.0, 3.0), SleepWindow("a", 5.0, 4.0)])
def test_trim_empty(window):
    with pytest.raises(PipelineError, match="empty"):
        trim_awake(_trace(100, 10.0), window)


@pytest.mark.parametrize("window", [SleepWindow("a", -1.0, 4.0), SleepWindow("a", 0.0, 10.5)])
def test_trim_outside(window):
    with pytest.raises(PipelineError, match="outside"):
        trim_awake(_trace(100, 10.0), window)


def test_segment_full_night_count():
    windows = segment(np.zeros(7_595_520, dtype=np.float32), 15_360)
    assert windows.shape == (494, 15_360)


def test_segment_drops_remainder():
    x = np.arange(100)
    w = segment(x, 30)
    assert w.shape == (3, 30)
    np.testing.assert_array_equal(w.ravel(), x[:90])


def test_segment_single_and_short(caplog):
    x = np.arange(7.0)
    np.testing.assert_array_equal(segment(x, 7), x[None, :])
    assert segment(x, 8).shape == (0, 8)
    assert "shorter than one" in caplog.text


@given(st.integers(0, 500), st.integers(1, 60))
def test_segment_conservation(length, seq_len):
    x = np.arange(length)
    w = segment(x, seq_len)
    assert w.size + length % seq_len == length
    np.testing.assert_array_equal(w.ravel(), x[: w.size])


def test_normalize_examples():
    np.testing.assert_allclose(normalize([1.0, 3.0]), [-1.0, 1.0])
    np.testing.assert_array_equal(normalize([5.0, 5.0, 5.0]), [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        normalize([])


@settings(deadline=None)
@given(arrays(np.float64, st.integers(2, 200), elements=st.floats(-1e6, 1e6)))
def test_normalize_properties(x):
    z = normalize(x)
    if np.ptp(x) == 0:
        np.testing.assert_array_equal(z, 0)
        return
    if np.std(x) < 1e-12 * max(1.0, np.max(np.abs(x))):
        return
    assert abs(z.mean()) < 1e-9
    assert abs(z.std() - 1) < 1e-9
    np.testing.assert_allclose(normalize(z), z, atol=1e-9)


def _sw(sid, label, n_windows, seq_len, channels, rate=64.0, fill=0.0):
    return SubjectWindows(
        sid,
        label,
        [np.full((n_windows, seq_len), fill + c) for c in range(channels)],
        [rate] * channels,
    )


def test_assemble_single_channel():
    group = ChannelGroup("X", ("A",))
    t = assemble(group, [_sw("s1", SeverityLabel.MOD, 3, 5, 1)])
    assert t.values.shape == (3, 5, 1)
    assert t.labels.tolist() == [2, 2, 2]


def test_assemble_stacks_channels_and_labels():
    group = GROUPS["ECG"]
    t = assemble(group, [_sw("a", SeverityLabel.NL, 2, 4, 2), _sw("b", SeverityLabel.SV, 3, 4, 2, fill=10)])
    assert t.values.shape == (5, 4, 2)
    assert t.subject_ids.tolist() == ["a", "a", "b", "b", "b"]
    assert t.labels.tolist() == [0, 0, 3, 3, 3]
    assert t.values[0, 0].tolist() == [0.0, 1.0]
    assert t.values[4, 0].tolist() == [10.0, 11.0]


def test_assemble_rejects_rate_mismatch():
    sw = _sw("a", SeverityLabel.NL, 2, 4, 2)
    sw.rates = [64.0, 128.0]
    with pytest.raises(PipelineError, match="Hz"):
        assemble(GROUPS["ECG"], [sw])


def test_assemble_rejects_channel_count():
    with pytest.raises(PipelineError, match="needs 2 channels"):
        assemble(GROUPS["ECG"], [_sw("a", SeverityLabel.NL, 2, 4, 3)])


def test_assemble_rejects_window_count_mismatch():
    sw = _sw("a", SeverityLabel.NL, 2, 4, 2)
    sw.windows[1] = np.zeros((3, 4))
    with pytest.raises(PipelineError, match="window counts"):
        assemble(GROUPS["ECG"], [sw])


def test_tensor_container_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    t = SegmentTensor(
        rng.standard_normal((5, 7, 3)).astype(np.float32),
        np.array([0, 1, 1, 3, 2], dtype=np.uint8),
        np.array(["p", "q", "q", "ü-9", "p"]),
        {"group": "EMG", "sampling_rate": 64.0},
    )
    save_tensor(t, tmp_path / "t.bin")
    raw = (tmp_path / "t.bin").read_bytes()
    assert raw[:8] == b"OSATNSR1"
    assert np.frombuffer(raw[8:32], "<u8").tolist() == [5, 7, 3]
    back = load_tensor(tmp_path / "t.bin")
    np.testing.assert_array_equal(back.values, t.values)
    np.testing.assert_array_equal(back.labels, t.labels)
    assert back.subject_ids.tolist() == t.subject_ids.tolist()
    assert back.meta == t.meta


def test_tensor_rejects_garbage(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"nonsense")
    with pytest.raises(PipelineError):
        load_tensor(tmp_path / "x.bin")


def test_build_tensor_from_synth(small_cohort):
    windows = read_sleep_windows(small_cohort.sleep_windows)
    t = build_tensor(small_cohort.cohort, GROUPS["EEG"], 10.0, windows)
    # 180 s recording, 20 s lead, 10 s tail: 150 s of sleep -> 15 windows each
    assert t.values.shape == (8 * 15, 640, 4)
    for sid, label in zip(t.subject_ids, t.labels):
        assert label == small_cohort.cohort.by_id()[sid].label
    # per channel, per subject normalization on the trimmed trace
    first = t.values[t.subject_ids == t.subjects[0]]
    flat = first.reshape(-1, 4)
    np.testing.assert_allclose(flat.mean(axis=0), 0, atol=1e-5)
    np.testing.assert_allclose(flat.std(axis=0), 1, atol=1e-5)


def test_build_tensor_parallel_matches_sequential(small_cohort):
    windows = read_sleep_windows(small_cohort.sleep_windows)
    a = build_tensor(small_cohort.cohort, GROUPS["RESP"], 5.0, windows)
    b = build_tensor(small_cohort.cohort, GROUPS["RESP"], 5.0, windows, workers=4)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.subject_ids.tolist() == b.subject_ids.tolist()


def test_segments_reassemble_trimmed_trace(small_cohort):
    from osacnn.edf import EdfFile

    subject = small_cohort.cohort.subjects[0]
    window = read_sleep_windows(small_cohort.sleep_windows)[subject.subject_id]
    t = build_tensor(small_cohort.cohort.subset([subject.subject_id]), GROUPS["ECG"], 10.0, {subject.subject_id: window})
    trace = trim_awake(EdfFile.open(subject.edf_path).signal("ECG1"), window)
    expected = normalize(trace.samples)
    np.testing.assert_allclose(t.values[:, :, 0].ravel(), expected[: t.values.shape[0] * 640], rtol=1e-6, atol=1e-6)


def test_build_tensor_reports_subject(small_cohort):
    bad = ChannelGroup("ECG", ("ECG1", "NOPE"))
    with pytest.raises(PipelineError, match=small_cohort.cohort.subjects[0].subject_id):
        build_tensor(small_cohort.cohort, bad, 10.0)
