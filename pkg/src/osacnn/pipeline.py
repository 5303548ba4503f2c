"""Awake trimming, fixed-length segmentation, z-scoring and tensor assembly."""

from __future__ import annotations

import csv
import json
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cohort import Cohort, SeverityLabel, Subject
from .edf import EdfFile, SignalTrace

logger = logging.getLogger(__name__)


class PipelineError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelGroup:
    name: str
    channel_labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.channel_labels:
            raise ValueError(f"channel group {self.name} has no channels")


GROUPS = {
    "ECG": ChannelGroup("ECG", ("ECG1", "ECG2")),
    "EEG": ChannelGroup("EEG", ("C3", "C4", "A1", "A2")),
    "EMG": ChannelGroup("EMG", ("EMG1", "EMG2", "EMG3")),
    "RESP": ChannelGroup("RESP", ("Airflow", "Thoracic", "Abdominal")),
}


def channel_group(name: str) -> ChannelGroup:
    try:
        return GROUPS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown channel group {name!r}; choose from {sorted(GROUPS)}") from None


@dataclass(frozen=True)
class SleepWindow:
    subject_id: str
    sleep_onset: float
    sleep_offset: float


def trim_awake(trace: SignalTrace, window: SleepWindow) -> SignalTrace:
    """Keep samples ``floor(onset * rate)`` up to (not including) ``floor(offset * rate)``."""
    rate = trace.sampling_rate
    n = len(trace.samples)
    if window.sleep_onset < 0 or window.sleep_offset * rate > n + 1e-9 * n:
        raise PipelineError(
            f"{window.subject_id}: sleep window [{window.sleep_onset}, {window.sleep_offset}) s "
            f"outside {trace.label} recording of {n / rate} s"
        )
    start = math.floor(window.sleep_onset * rate)
    stop = min(math.floor(window.sleep_offset * rate), n)
    if stop <= start:
        raise PipelineError(
            f"{window.subject_id}: sleep window [{window.sleep_onset}, {window.sleep_offset}) s is empty"
        )
    return SignalTrace(trace.label, rate, trace.samples[start:stop])


def segment(samples: np.ndarray, seq_len: int) -> np.ndarray:
    """Consecutive non-overlapping windows, shape ``(floor(L / seq_len), seq_len)``.

    The trailing remainder is dropped. Returns a view when possible.
    """
    if seq_len < 1:
        raise ValueError(f"seq_len must be >= 1, got {seq_len}")
    samples = np.asarray(samples)
    count = len(samples) // seq_len
    if count == 0:
        logger.warning("trace of %d samples shorter than one %d-sample window", len(samples), seq_len)
    return samples[: count * seq_len].reshape(count, seq_len)


def normalize(values: np.ndarray) -> np.ndarray:
    """Zero mean, unit population standard deviation; all zeros if the input is constant.

    Constant means a spread below 1e-12 relative to the signal magnitude, so
    rounding in the mean of a flat trace cannot be amplified into noise.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot normalize an empty sequence")
    centered = values - values.mean()
    std = np.sqrt(np.mean(centered * centered))
    if std < 1e-12 * max(1.0, float(np.max(np.abs(values)))):
        return np.zeros_like(values)
    return centered / std


@dataclass
class SubjectWindows:
    """One subject's windows for every channel of a group, in group order."""

    subject_id: str
    label: SeverityLabel
    windows: list[np.ndarray]
    rates: list[float]


@dataclass
class SegmentTensor:
    values: np.ndarray  # (N, seq_len, C) float32
    labels: np.ndarray  # (N,) uint8
    subject_ids: np.ndarray  # (N,) str
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.values.ndim != 3:
            raise PipelineError(f"segment tensor must be 3-D, got shape {self.values.shape}")
        n = self.values.shape[0]
        if self.labels.shape != (n,) or self.subject_ids.shape != (n,):
            raise PipelineError(
                f"{n} segments but {self.labels.shape[0]} labels and {self.subject_ids.shape[0]} subject ids"
            )

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def seq_len(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @property
    def subjects(self) -> list[str]:
        return list(dict.fromkeys(self.subject_ids.tolist()))

    def select(self, subject_ids: Iterable[str]) -> SegmentTensor:
        keep = set(subject_ids)
        mask = np.isin(self.subject_ids, list(keep))
        missing = keep - set(self.subject_ids.tolist())
        if missing:
            logger.warning("subjects without segments: %s", sorted(missing))
        return SegmentTensor(self.values[mask], self.labels[mask], self.subject_ids[mask], dict(self.meta))


def assemble(group: ChannelGroup, subjects: Sequence[SubjectWindows]) -> SegmentTensor:
    """Stack each subject's channels on the last axis and concatenate subjects along N."""
    if not subjects:
        raise PipelineError("no subjects to assemble")
    n_channels = len(group.channel_labels)
    seq_len = None
    rate = None
    blocks, labels, ids = [], [], []
    for sw in subjects:
        if len(sw.windows) != n_channels or len(sw.rates) != n_channels:
            raise PipelineError(
                f"{sw.subject_id}: group {group.name} needs {n_channels} channels, got {len(sw.windows)}"
            )
        for label, r in zip(group.channel_labels, sw.rates):
            if rate is None:
                rate = r
            elif r != rate:
                raise PipelineError(
                    f"{sw.subject_id}: channel {label} sampled at {r} Hz, group {group.name} uses {rate} Hz"
                )
        counts = {w.shape[0] for w in sw.windows}
        if len(counts) != 1:
            raise PipelineError(f"{sw.subject_id}: channels yield different window counts {sorted(counts)}")
        for w in sw.windows:
            if seq_len is None:
                seq_len = w.shape[1]
            elif w.shape[1] != seq_len:
                raise PipelineError(f"{sw.subject_id}: window length {w.shape[1]} != {seq_len}")
        count = counts.pop()
        blocks.append(np.stack(sw.windows, axis=-1).astype(np.float32))
        labels.append(np.full(count, int(sw.label), dtype=np.uint8))
        ids.append(np.full(count, sw.subject_id, dtype=object))
    meta = {"group": group.name, "channels": list(group.channel_labels), "sampling_rate": rate, "seq_len": seq_len}
    return SegmentTensor(
        np.concatenate(blocks), np.concatenate(labels), np.concatenate(ids).astype(str), meta
    )


# -- per-subject processing ------------------------------------------------


def read_sleep_windows(path: str | Path) -> dict[str, SleepWindow]:
    path = Path(path)
    out = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"subject_id", "sleep_onset_sec", "sleep_offset_sec"}
        if not need <= set(reader.fieldnames or []):
            raise ValueError(f"{path}: sidecar needs columns {sorted(need)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                w = SleepWindow(row["subject_id"].strip(), float(row["sleep_onset_sec"]), float(row["sleep_offset_sec"]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            out[w.subject_id] = w
    return out


def write_sleep_windows(windows: Iterable[SleepWindow], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("subject_id", "sleep_onset_sec", "sleep_offset_sec"))
        for w in windows:
            writer.writerow((w.subject_id, repr(w.sleep_onset), repr(w.sleep_offset)))


def process_subject(
    subject: Subject,
    group: ChannelGroup,
    seq_seconds: float,
    window: SleepWindow | None = None,
) -> SubjectWindows:
    """Read one EDF and produce normalized windows for every channel in ``group``.

    Normalization statistics come from the trimmed trace of each channel.
    """
    try:
        edf = EdfFile.open(subject.edf_path)
        windows, rates = [], []
        for label in group.channel_labels:
            trace = edf.signal(label)
            if window is not None:
                trace = trim_awake(trace, window)
            seq_len = trace.sampling_rate * seq_seconds
            if not float(seq_len).is_integer():
                raise PipelineError(
                    f"{seq_seconds} s at {trace.sampling_rate} Hz is not a whole number of samples"
                )
            windows.append(segment(normalize(trace.samples), int(seq_len)))
            rates.append(trace.sampling_rate)
    except (ValueError, KeyError, OSError) as exc:
        raise PipelineError(f"subject {subject.subject_id}: {exc}") from exc
    return SubjectWindows(subject.subject_id, subject.label, windows, rates)


def build_tensor(
    cohort: Cohort,
    group: ChannelGroup,
    seq_seconds: float = 60.0,
    sleep_windows: Mapping[str, SleepWindow] | None = None,
    workers: int = 1,
) -> SegmentTensor:
    """Run the whole pipeline over a cohort, concatenating in cohort order."""
    if len(cohort) == 0:
        raise PipelineError("cohort is empty")
    if sleep_windows is None:
        logger.warning("no sleep-window sidecar; recordings are not trimmed")
        sleep_windows = {}

    def job(subject: Subject) -> SubjectWindows:
        window = sleep_windows.get(subject.subject_id)
        if window is None and sleep_windows:
            logger.warning("%s: no sleep window, using full recording", subject.subject_id)
        return process_subject(subject, group, seq_seconds, window)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(job, cohort.subjects))
    else:
        results = [job(s) for s in cohort.subjects]
    tensor = assemble(group, results)
    tensor.meta["seq_seconds"] = seq_seconds
    return tensor


# -- tensor container ------------------------------------------------------
#
#   8 bytes   magic b"OSATNSR1"
#   24 bytes  N, seq_len, C as uint64 little-endian
#   4*N*L*C   float32 little-endian values, row-major (N, seq_len, C)
#   N bytes   labels (class indices 0..3)
#   4 bytes   uint32 number of distinct subject ids S
#   S times   uint16 byte length + UTF-8 subject id
#   4*N bytes uint32 index into the subject table for each row
#   8 bytes   uint64 length P of the provenance block
#   P bytes   UTF-8 JSON provenance / metadata

TENSOR_MAGIC = b"OSATNSR1"


def save_tensor(tensor: SegmentTensor, path: str | Path) -> None:
    n, length, channels = tensor.values.shape
    table = tensor.subjects
    index = {sid: i for i, sid in enumerate(table)}
    parts = [
        TENSOR_MAGIC,
        struct.pack("<QQQ", n, length, channels),
        np.ascontiguousarray(tensor.values, dtype="<f4").tobytes(),
        tensor.labels.astype(np.uint8).tobytes(),
        struct.pack("<I", len(table)),
    ]
    for sid in table:
        encoded = sid.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
    parts.append(np.array([index[s] for s in tensor.subject_ids.tolist()], dtype="<u4").tobytes())
    meta = json.dumps(tensor.meta, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<Q", len(meta)), meta]
    Path(path).write_bytes(b"".join(parts))


def load_tensor(path: str | Path) -> SegmentTensor:
    raw = Path(path).read_bytes()
    if raw[:8] != TENSOR_MAGIC:
        raise PipelineError(f"{path}: not a segment tensor file")
    try:
        n, length, channels = struct.unpack_from("<QQQ", raw, 8)
        pos = 32
        count = n * length * channels
        values = np.frombuffer(raw, "<f4", count, pos).reshape(n, length, channels).astype(np.float32)
        pos += 4 * count
        labels = np.frombuffer(raw, np.uint8, n, pos).copy()
        pos += n
        (s,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        table = []
        for _ in range(s):
            (size,) = struct.unpack_from("<H", raw, pos)
            table.append(raw[pos + 2 : pos + 2 + size].decode("utf-8"))
            pos += 2 + size
        idx = np.frombuffer(raw, "<u4", n, pos)
        pos += 4 * n
        (p,) = struct.unpack_from("<Q", raw, pos)
        meta = json.loads(raw[pos + 8 : pos + 8 + p].decode("utf-8"))
    except (struct.error, ValueError) as exc:
        raise PipelineError(f"{path}: corrupt segment tensor: {exc}") from None
    ids = np.array(table, dtype=str)[idx] if n else np.array([], dtype=str)
    if labels.size and labels.max() > 3:
        raise PipelineError(f"{path}: label byte out of range")
    return SegmentTensor(values, labels, ids, meta)
