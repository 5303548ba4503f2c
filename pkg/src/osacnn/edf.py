"""Reading and writing plain EDF files.

Layout: a 256-byte main header, 256 bytes of per-signal header fields per
signal (stored field-major: all labels, then all transducers, ...), then
``num_records`` data records. Each record holds ``samples_per_record``
little-endian int16 samples for every signal in turn.
"""

from __future__ import annotations

import datetime as dt
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

MAIN_HEADER_BYTES = 256
SIGNAL_HEADER_BYTES = 256

# (name, width) in file order
_MAIN_FIELDS = (
    ("version", 8),
    ("patient_id", 80),
    ("recording_id", 80),
    ("startdate", 8),
    ("starttime", 8),
    ("header_bytes", 8),
    ("reserved", 44),
    ("num_records", 8),
    ("record_duration", 8),
    ("num_signals", 4),
)
_SIGNAL_FIELDS = (
    ("label", 16),
    ("transducer", 80),
    ("physical_dimension", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefiltering", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)


class EdfError(ValueError):
    """Malformed EDF input. ``offset`` is the byte position of the offending field."""

    def __init__(self, message: str, offset: int | None = None) -> None:
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


@dataclass(frozen=True)
class EdfHeader:
    version: str
    patient_id: str
    recording_id: str
    start_datetime: dt.datetime
    header_bytes: int
    num_records: int
    record_duration: float
    num_signals: int
    reserved: str = ""
    non_ascii_fields: tuple[str, ...] = ()
    num_records_resolved: bool = False

    @property
    def duration(self) -> float:
        return self.num_records * self.record_duration


@dataclass(frozen=True)
class SignalSpec:
    label: str
    samples_per_record: int
    physical_min: float = -32768.0
    physical_max: float = 32767.0
    digital_min: int = -32768
    digital_max: int = 32767
    physical_dimension: str = ""
    transducer: str = ""
    prefiltering: str = ""

    def __post_init__(self) -> None:
        if self.physical_max == self.physical_min:
            raise ValueError(f"signal {self.label!r}: physical_max equals physical_min")
        if self.digital_max == self.digital_min:
            raise ValueError(f"signal {self.label!r}: digital_max equals digital_min")
        if self.samples_per_record < 1:
            raise ValueError(f"signal {self.label!r}: samples_per_record must be >= 1")

    @property
    def gain(self) -> float:
        return (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min)

    @property
    def quantization_step(self) -> float:
        return abs(self.gain)

    def sampling_rate(self, record_duration: float) -> float:
        return self.samples_per_record / record_duration

    def to_physical(self, digital: np.ndarray) -> np.ndarray:
        return self.physical_min + (np.asarray(digital, dtype=np.float64) - self.digital_min) * self.gain

    def to_digital(self, physical: np.ndarray) -> np.ndarray:
        d = np.rint((np.asarray(physical, dtype=np.float64) - self.physical_min) / self.gain + self.digital_min)
        lo, hi = sorted((self.digital_min, self.digital_max))
        return np.clip(d, lo, hi).astype("<i2")


@dataclass(frozen=True)
class SignalTrace:
    label: str
    sampling_rate: float
    samples: np.ndarray

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sampling_rate


@dataclass
class ParseReport:
    """Non-fatal irregularities found while reading."""

    clamped: Counter = field(default_factory=Counter)
    num_records_resolved: bool = False
    non_ascii_fields: tuple[str, ...] = ()

    @property
    def clean(self) -> bool:
        return not self.clamped and not self.non_ascii_fields and not self.num_records_resolved


def _decode(raw: bytes, name: str, flagged: list[str]) -> str:
    if any(b >= 0x80 for b in raw):
        flagged.append(name)
        raw = bytes(b if b < 0x80 else ord("?") for b in raw)
    return raw.decode("ascii").strip()


def _parse_int(text: str, name: str, offset: int) -> int:
    try:
        return int(text)
    except ValueError:
        try:
            value = float(text)
        except ValueError:
            raise EdfError(f"non-numeric {name} field {text!r}", offset) from None
        if not value.is_integer():
            raise EdfError(f"non-integer {name} field {text!r}", offset) from None
        return int(value)


def _parse_float(text: str, name: str, offset: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise EdfError(f"non-numeric {name} field {text!r}", offset) from None
    if not math.isfinite(value):
        raise EdfError(f"non-finite {name} field {text!r}", offset)
    return value


def _parse_start(date_text: str, time_text: str, offset: int) -> dt.datetime:
    try:
        day, month, year = (int(p) for p in date_text.split("."))
        hour, minute, second = (int(p) for p in time_text.split("."))
    except ValueError:
        raise EdfError(f"bad start date/time {date_text!r} {time_text!r}", offset) from None
    # EDF clipping date: two-digit years 85-99 are 19xx
    year += 1900 if year >= 85 else 2000
    try:
        return dt.datetime(year, month, day, hour, minute, second)
    except ValueError as exc:
        raise EdfError(f"bad start date/time {date_text!r} {time_text!r}: {exc}", offset) from None


def parse_header(raw: bytes, file_size: int | None = None) -> tuple[EdfHeader, list[SignalSpec]]:
    """Decode the main and per-signal headers.

    ``file_size`` (defaults to ``len(raw)``) is used to resolve an unknown
    record count (-1).
    """
    if len(raw) < MAIN_HEADER_BYTES:
        raise EdfError(f"truncated header: {len(raw)} bytes, need at least {MAIN_HEADER_BYTES}", len(raw))
    flagged: list[str] = []
    main: dict[str, tuple[str, int]] = {}
    pos = 0
    for name, width in _MAIN_FIELDS:
        main[name] = (_decode(raw[pos : pos + width], name, flagged), pos)
        pos += width

    num_signals = _parse_int(main["num_signals"][0], "num_signals", main["num_signals"][1])
    if num_signals < 1:
        raise EdfError(f"num_signals must be >= 1, got {num_signals}", main["num_signals"][1])
    header_bytes = _parse_int(main["header_bytes"][0], "header_bytes", main["header_bytes"][1])
    expected = MAIN_HEADER_BYTES + SIGNAL_HEADER_BYTES * num_signals
    if header_bytes != expected:
        raise EdfError(
            f"header_bytes {header_bytes} inconsistent with {num_signals} signals (expected {expected})",
            main["header_bytes"][1],
        )
    if len(raw) < expected:
        raise EdfError(f"truncated signal headers: {len(raw)} bytes, need {expected}", len(raw))

    num_records = _parse_int(main["num_records"][0], "num_records", main["num_records"][1])
    record_duration = _parse_float(main["record_duration"][0], "record_duration", main["record_duration"][1])
    if record_duration <= 0:
        raise EdfError(f"record_duration must be positive, got {record_duration}", main["record_duration"][1])
    start = _parse_start(main["startdate"][0], main["starttime"][0], main["startdate"][1])

    columns: dict[str, list[tuple[str, int]]] = {}
    for name, width in _SIGNAL_FIELDS:
        col = []
        for i in range(num_signals):
            col.append((_decode(raw[pos : pos + width], f"signal[{i}].{name}", flagged), pos))
            pos += width
        columns[name] = col

    specs = []
    for i in range(num_signals):
        def num(name: str, parse=_parse_float):
            text, off = columns[name][i]
            return parse(text, f"signal[{i}].{name}", off)

        try:
            spec = SignalSpec(
                label=columns["label"][i][0],
                transducer=columns["transducer"][i][0],
                physical_dimension=columns["physical_dimension"][i][0],
                physical_min=num("physical_min"),
                physical_max=num("physical_max"),
                digital_min=num("digital_min", _parse_int),
                digital_max=num("digital_max", _parse_int),
                prefiltering=columns["prefiltering"][i][0],
                samples_per_record=num("samples_per_record", _parse_int),
            )
        except ValueError as exc:
            if isinstance(exc, EdfError):
                raise
            raise EdfError(str(exc), columns["label"][i][1]) from None
        specs.append(spec)

    resolved = num_records == -1
    if resolved:
        size = len(raw) if file_size is None else file_size
        record_bytes = 2 * sum(s.samples_per_record for s in specs)
        num_records = (size - header_bytes) // record_bytes
        logger.info("resolved unknown record count to %d from file size", num_records)
    elif num_records < 0:
        raise EdfError(f"invalid num_records {num_records}", main["num_records"][1])

    if flagged:
        logger.warning("non-ASCII bytes replaced in header fields: %s", ", ".join(flagged))
    header = EdfHeader(
        version=main["version"][0],
        patient_id=main["patient_id"][0],
        recording_id=main["recording_id"][0],
        start_datetime=start,
        header_bytes=header_bytes,
        num_records=num_records,
        record_duration=record_duration,
        num_signals=num_signals,
        reserved=main["reserved"][0],
        non_ascii_fields=tuple(flagged),
        num_records_resolved=resolved,
    )
    return header, specs


def _record_matrix(raw: bytes, header: EdfHeader, specs: Sequence[SignalSpec]) -> np.ndarray:
    per_record = sum(s.samples_per_record for s in specs)
    needed = header.header_bytes + 2 * per_record * header.num_records
    if len(raw) < needed:
        complete = (len(raw) - header.header_bytes) // (2 * per_record)
        raise EdfError(
            f"file has {len(raw)} bytes but {header.num_records} records need {needed}; "
            f"data ends inside record {complete}",
            len(raw),
        )
    data = np.frombuffer(raw, dtype="<i2", count=per_record * header.num_records, offset=header.header_bytes)
    return data.reshape(header.num_records, per_record)


def read_signal(
    raw: bytes,
    header: EdfHeader,
    specs: Sequence[SignalSpec],
    signal_index: int,
    report: ParseReport | None = None,
) -> SignalTrace:
    """Physical-unit samples of one signal, concatenated across records.

    Digital values outside the declared digital range are clamped and counted
    in ``report``.
    """
    if not 0 <= signal_index < len(specs):
        raise IndexError(f"signal index {signal_index} out of range for {len(specs)} signals")
    records = _record_matrix(raw, header, specs)
    spec = specs[signal_index]
    start = sum(s.samples_per_record for s in specs[:signal_index])
    digital = records[:, start : start + spec.samples_per_record].reshape(-1)
    lo, hi = sorted((spec.digital_min, spec.digital_max))
    out_of_range = int(np.count_nonzero((digital < lo) | (digital > hi)))
    if out_of_range:
        logger.warning("signal %r: %d samples outside digital range clamped", spec.label, out_of_range)
        if report is not None:
            report.clamped[spec.label] += out_of_range
        digital = np.clip(digital, lo, hi)
    return SignalTrace(spec.label, spec.sampling_rate(header.record_duration), spec.to_physical(digital))


class EdfFile:
    """An EDF file held in memory, with signals addressable by label."""

    def __init__(self, raw: bytes, source: str | None = None) -> None:
        self.raw = bytes(raw)
        self.source = source
        self.header, self.specs = parse_header(self.raw)
        self.report = ParseReport(
            non_ascii_fields=self.header.non_ascii_fields,
            num_records_resolved=self.header.num_records_resolved,
        )
        _record_matrix(self.raw, self.header, self.specs)

    @classmethod
    def open(cls, path: str | Path) -> EdfFile:
        path = Path(path)
        return cls(path.read_bytes(), source=str(path))

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.specs]

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            where = f" in {self.source}" if self.source else ""
            raise KeyError(f"no signal labelled {label!r}{where}; have {self.labels}") from None

    def signal(self, key: int | str) -> SignalTrace:
        i = self.index(key) if isinstance(key, str) else key
        return read_signal(self.raw, self.header, self.specs, i, self.report)

    def sampling_rate(self, key: int | str) -> float:
        i = self.index(key) if isinstance(key, str) else key
        return self.specs[i].sampling_rate(self.header.record_duration)


# -- writing ---------------------------------------------------------------


def format_number(value: float, width: int = 8) -> str:
    """Shortest decimal text that fits ``width`` and parses back to ``value`` exactly."""
    if float(value).is_integer() and abs(value) < 10 ** (width - 1):
        text = str(int(value))
        if len(text) <= width:
            return text
    for precision in range(1, width + 1):
        text = f"{value:.{precision}g}"
        if "e" in text:
            continue
        if len(text) <= width and float(text) == value:
            return text
    raise ValueError(f"{value!r} cannot be written exactly in a {width}-character EDF field")


def _field(text: str, width: int) -> bytes:
    encoded = text.encode("ascii")
    if len(encoded) > width:
        raise ValueError(f"{text!r} exceeds {width}-character EDF field")
    return encoded.ljust(width, b" ")


def write_edf(
    path: str | Path | None,
    specs: Sequence[SignalSpec],
    signals: Sequence[np.ndarray],
    record_duration: float = 1.0,
    *,
    patient_id: str = "X X X X",
    recording_id: str = "Startdate X X X X",
    start: dt.datetime = dt.datetime(2000, 1, 1),
    digital: bool = False,
) -> bytes:
    """Encode signals as EDF and optionally write them to ``path``.

    ``signals`` are physical values unless ``digital`` is true. Each signal
    must hold a whole number of records' worth of samples, the same number of
    records for every signal. Returns the encoded bytes.
    """
    if not specs:
        raise ValueError("at least one signal is required")
    if len(specs) != len(signals):
        raise ValueError(f"{len(specs)} specs but {len(signals)} signals")
    counts = set()
    for spec, samples in zip(specs, signals):
        n, rem = divmod(len(samples), spec.samples_per_record)
        if rem:
            raise ValueError(f"signal {spec.label!r}: {len(samples)} samples is not a whole number of records")
        counts.add(n)
    if len(counts) != 1:
        raise ValueError(f"signals span different record counts: {sorted(counts)}")
    num_records = counts.pop()
    ns = len(specs)

    main = [
        _field("0", 8),
        _field(patient_id, 80),
        _field(recording_id, 80),
        _field(start.strftime("%d.%m.%y"), 8),
        _field(start.strftime("%H.%M.%S"), 8),
        _field(str(MAIN_HEADER_BYTES + SIGNAL_HEADER_BYTES * ns), 8),
        _field("", 44),
        _field(str(num_records), 8),
        _field(format_number(record_duration), 8),
        _field(str(ns), 4),
    ]
    per_signal = [
        [_field(s.label, 16) for s in specs],
        [_field(s.transducer, 80) for s in specs],
        [_field(s.physical_dimension, 8) for s in specs],
        [_field(format_number(s.physical_min), 8) for s in specs],
        [_field(format_number(s.physical_max), 8) for s in specs],
        [_field(format_number(s.digital_min), 8) for s in specs],
        [_field(format_number(s.digital_max), 8) for s in specs],
        [_field(s.prefiltering, 80) for s in specs],
        [_field(str(s.samples_per_record), 8) for s in specs],
        [_field("", 32) for _ in specs],
    ]
    header = b"".join(main) + b"".join(b"".join(col) for col in per_signal)

    blocks = []
    for spec, samples in zip(specs, signals):
        if digital:
            d = np.asarray(samples).astype("<i2")
        else:
            d = spec.to_digital(samples)
        blocks.append(d.reshape(num_records, spec.samples_per_record))
    body = np.concatenate(blocks, axis=1).astype("<i2").tobytes() if num_records else b""
    raw = header + body
    if path is not None:
        Path(path).write_bytes(raw)
    return raw
