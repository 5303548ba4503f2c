import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from osacnn.edf import EdfError, EdfFile, SignalSpec, format_number, parse_header, read_signal, write_edf


def _specs():
    return [
        SignalSpec("ECG1", 256, -5000.0, 5000.0, -32768, 32767, "uV", "AgAgCl electrode", "HP:0.1Hz"),
        SignalSpec("Airflow", 32, -1.0, 1.0, -2048, 2047, "a.u.", "thermistor", ""),
        SignalSpec("EMG1", 128, 0.0, 250.5, 0, 1000, "uV"),
    ]


def test_header_bytes_identity_accepted():
    specs = [SignalSpec(f"S{i}", 2) for i in range(12)]
    raw = write_edf(None, specs, [np.zeros(2)] * 12, 1.0)
    assert raw[184:192].decode().strip() == "3328"
    header, parsed = parse_header(raw)
    assert header.num_signals == 12 and header.header_bytes == 3328
    assert len(parsed) == 12


def test_header_bytes_mismatch_rejected():
    specs = [SignalSpec(f"S{i}", 2) for i in range(12)]
    raw = bytearray(write_edf(None, specs, [np.zeros(2)] * 12, 1.0))
    raw[184:192] = b"3000    "
    with pytest.raises(EdfError, match="inconsistent") as info:
        parse_header(bytes(raw))
    assert info.value.offset == 184


@pytest.mark.parametrize(
    "mutate, match",
    [
        (lambda r: r[:100], "truncated header"),
        (lambda r: r[:400], "truncated signal headers"),
        (lambda r: r[:236] + b"abc     " + r[244:], "non-numeric num_records"),
        (lambda r: r[:244] + b"zero    " + r[252:], "non-numeric record_duration"),
        (lambda r: r[:244] + b"0       " + r[252:], "record_duration must be positive"),
        (lambda r: r[:252] + b"0   " + r[256:], "num_signals must be >= 1"),
        (lambda r: r[:168] + b"41.13.01" + r[176:], "bad start date"),
    ],
)
def test_malformed_headers_rejected(mutate, match):
    raw = write_edf(None, [SignalSpec("X", 4)], [np.zeros(8)], 1.0)
    with pytest.raises(EdfError, match=match):
        parse_header(mutate(raw))


def test_equal_physical_range_rejected():
    raw = bytearray(write_edf(None, [SignalSpec("X", 4, -1, 1)], [np.zeros(4)], 1.0))
    # signal physical_max field sits after label/transducer/dimension/physical_min
    off = 256 + 16 + 80 + 8 + 8
    raw[off : off + 8] = b"-1      "
    with pytest.raises(EdfError, match="physical_max equals physical_min"):
        parse_header(bytes(raw))


def test_round_trip_specs_exact():
    specs = _specs()
    signals = [np.zeros(256 * 3), np.zeros(32 * 3), np.zeros(128 * 3)]
    start = dt.datetime(2007, 3, 14, 22, 5, 9)
    raw = write_edf(None, specs, signals, 1.0, patient_id="P-17 M 01-JAN-1990 X", start=start)
    header, parsed = parse_header(raw)
    assert parsed == specs
    assert header.num_records == 3
    assert header.start_datetime == start
    assert header.patient_id == "P-17 M 01-JAN-1990 X"
    assert header.non_ascii_fields == ()


def test_read_signal_digital_min_maps_to_physical_min():
    spec = SignalSpec("X", 3, -200.0, 300.0, -1000, 1000)
    raw = write_edf(None, [spec], [np.array([-1000, 0, 1000])], 1.0, digital=True)
    header, specs = parse_header(raw)
    trace = read_signal(raw, header, specs, 0)
    assert trace.samples[0] == -200.0
    assert trace.samples[2] == 300.0
    assert trace.samples[1] == pytest.approx(50.0)


def test_identity_scaling():
    spec = SignalSpec("X", 5)
    d = np.array([-32768, -1, 0, 1, 32767])
    raw = write_edf(None, [spec], [d], 1.0, digital=True)
    header, specs = parse_header(raw)
    np.testing.assert_array_equal(read_signal(raw, header, specs, 0).samples, d)


def test_sine_round_trip_within_one_step():
    rate, seconds = 256, 4
    t = np.arange(rate * seconds) / rate
    x = 800.0 * np.sin(2 * np.pi * 1.5 * t) + 12.0
    spec = SignalSpec("ECG1", rate, -1000.0, 1000.0, -32768, 32767, "uV")
    raw = write_edf(None, [spec], [x], 1.0)
    edf = EdfFile(raw)
    trace = edf.signal("ECG1")
    assert trace.sampling_rate == 256
    assert len(trace.samples) == len(x)
    assert np.max(np.abs(trace.samples - x)) <= spec.quantization_step


def test_interleaved_records():
    a = SignalSpec("A", 2)
    b = SignalSpec("B", 3)
    raw = write_edf(None, [a, b], [np.array([1, 2, 3, 4]), np.array([10, 20, 30, 40, 50, 60])], 1.0, digital=True)
    body = np.frombuffer(raw[768:], dtype="<i2")
    np.testing.assert_array_equal(body, [1, 2, 10, 20, 30, 3, 4, 40, 50, 60])
    edf = EdfFile(raw)
    np.testing.assert_array_equal(edf.signal("B").samples, [10, 20, 30, 40, 50, 60])
    assert edf.sampling_rate("A") == 2


def test_fractional_record_duration_rate():
    raw = write_edf(None, [SignalSpec("A", 5)], [np.zeros(10)], 0.5)
    edf = EdfFile(raw)
    assert edf.header.record_duration == 0.5
    assert edf.sampling_rate(0) == 10.0


def test_short_file_rejected():
    raw = write_edf(None, [SignalSpec("A", 4)], [np.zeros(12)], 1.0)
    with pytest.raises(EdfError, match="data ends inside record 2"):
        EdfFile(raw[:-3])


def test_unknown_record_count_resolved():
    raw = bytearray(write_edf(None, [SignalSpec("A", 4)], [np.arange(12)], 1.0, digital=True))
    raw[236:244] = b"-1      "
    edf = EdfFile(bytes(raw))
    assert edf.header.num_records == 3
    assert edf.report.num_records_resolved
    np.testing.assert_array_equal(edf.signal(0).samples, np.arange(12))


def test_out_of_range_digital_clamped_and_reported():
    spec = SignalSpec("A", 4, -1.0, 1.0, -100, 100)
    raw = write_edf(None, [spec], [np.array([-500, -100, 100, 500])], 1.0, digital=True)
    edf = EdfFile(raw)
    np.testing.assert_allclose(edf.signal("A").samples, [-1, -1, 1, 1])
    assert edf.report.clamped["A"] == 2


def test_non_ascii_replaced_and_flagged():
    raw = bytearray(write_edf(None, [SignalSpec("A", 1)], [np.zeros(1)], 1.0))
    raw[8:12] = "Zoë".encode("latin-1") + b" "
    header, _ = parse_header(bytes(raw))
    assert header.patient_id.startswith("Zo?")
    assert header.non_ascii_fields == ("patient_id",)


def test_index_out_of_range():
    raw = write_edf(None, [SignalSpec("A", 1)], [np.zeros(1)], 1.0)
    header, specs = parse_header(raw)
    with pytest.raises(IndexError):
        read_signal(raw, header, specs, 1)
    with pytest.raises(KeyError, match="no signal labelled"):
        EdfFile(raw).signal("B")


def test_parse_is_pure():
    raw = write_edf(None, _specs(), [np.zeros(256), np.zeros(32), np.zeros(128)], 1.0)
    assert parse_header(raw) == parse_header(raw)


def test_format_number():
    assert format_number(3328) == "3328"
    assert format_number(-5000.0) == "-5000"
    assert format_number(0.5) == "0.5"
    assert format_number(-0.00125) == "-0.00125"
    with pytest.raises(ValueError):
        format_number(1 / 3)


@settings(max_examples=60, deadline=None)
@given(
    st.integers(-30000, 30000),
    st.integers(1, 30000),
    st.integers(-1000, 1000),
    st.integers(1, 5000),
    st.lists(st.floats(0, 1), min_size=6, max_size=6),
)
def test_round_trip_property(dmin, dspan, pmin, pspan, fractions):
    spec = SignalSpec("P", 6, float(pmin), float(pmin + pspan), dmin, min(dmin + dspan, 32767))
    x = spec.physical_min + np.array(fractions) * (spec.physical_max - spec.physical_min)
    raw = write_edf(None, [spec], [x], 1.0)
    header, parsed = parse_header(raw)
    assert parsed == [spec]
    back = read_signal(raw, header, parsed, 0).samples
    assert np.max(np.abs(back - x)) <= spec.quantization_step * (0.5 + 1e-9)


@given(st.integers(-100, 99), st.integers(-100, 99))
def test_physical_map_strictly_increasing(d1, d2):
    spec = SignalSpec("M", 1, -3.5, 7.25, -100, 100)
    p1, p2 = spec.to_physical(np.array([d1, d2]))
    if d1 < d2:
        assert p1 < p2
    elif d1 > d2:
        assert p1 > p2
