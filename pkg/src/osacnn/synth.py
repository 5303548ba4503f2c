"""Synthetic PSG cohorts written as EDF, for exercising the pipeline end to end.

Every channel carries a base oscillation whose frequency depends on the
subject's class, plus Hann-windowed tone bursts. Burst count follows the
subject's oahi3 (events per hour of sleep times ``burst_rate_scale``) and
burst amplitude depends on the class. White noise is added on top, louder
outside the sleep window. Per-channel gain and DC offset vary by subject.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cohort import Cohort, SeverityLabel, Subject, label_from_oahi3, oahi3_band, write_manifest
from .edf import SignalSpec, write_edf
from .pipeline import GROUPS, SleepWindow, write_sleep_windows
from .rng import SplitMix64

logger = logging.getLogger(__name__)

PHYSICAL_RANGE = 1000.0
_UNITS = {"ECG": "uV", "EEG": "uV", "EMG": "uV", "RESP": "a.u."}


def _default_channels() -> dict[str, tuple[str, ...]]:
    return {name: g.channel_labels for name, g in GROUPS.items()}


@dataclass(frozen=True)
class SynthSpec:
    subjects_per_class: tuple[int, int, int, int] = (8, 8, 8, 8)
    channels: dict[str, tuple[str, ...]] = field(default_factory=_default_channels)
    rates: dict[str, float] = field(default_factory=lambda: {name: 64.0 for name in GROUPS})
    duration: float = 1200.0
    awake_lead: float = 60.0
    awake_tail: float = 60.0
    base_frequencies: tuple[float, float, float, float] = (1.0, 2.0, 3.5, 5.5)
    frequency_jitter: float = 0.03
    burst_amplitudes: tuple[float, float, float, float] = (0.5, 1.0, 1.5, 2.0)
    burst_rate_scale: float = 1.0
    burst_seconds: float = 4.0
    burst_frequency: float = 9.0
    oahi3_ranges: tuple[tuple[float, float], ...] = ((0.2, 0.9), (1.5, 4.5), (5.5, 9.5), (11.0, 30.0))
    amplitude: float = 100.0
    noise: float = 0.3
    awake_noise_factor: float = 3.0
    record_duration: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        counts = self.subjects_per_class
        if isinstance(counts, int):
            counts = (counts,) * 4
            object.__setattr__(self, "subjects_per_class", counts)
        problems = []
        if len(counts) != 4 or any(int(c) != c or c < 1 for c in counts):
            problems.append(f"subjects_per_class must be four positive integers, got {counts}")
        for name in ("base_frequencies", "burst_amplitudes", "oahi3_ranges"):
            if len(getattr(self, name)) != 4:
                problems.append(f"{name} needs one entry per class")
        if self.duration <= 0 or self.record_duration <= 0:
            problems.append("duration and record_duration must be positive")
        if self.awake_lead < 0 or self.awake_tail < 0 or self.awake_lead + self.awake_tail >= self.duration:
            problems.append("awake periods must leave a non-empty sleep window")
        if not float(self.duration / self.record_duration).is_integer():
            problems.append("duration must be a whole number of records")
        if set(self.channels) != set(self.rates):
            problems.append("channels and rates must name the same groups")
        for group, rate in self.rates.items():
            if rate <= 0 or not float(rate * self.record_duration).is_integer():
                problems.append(f"{group}: rate {rate} Hz is not a whole number of samples per record")
            elif max(self.base_frequencies) * (1 + self.frequency_jitter) >= rate / 2:
                problems.append(f"{group}: base frequencies exceed Nyquist at {rate} Hz")
        for label, (low, high) in zip(SeverityLabel, self.oahi3_ranges):
            band_low, band_high = oahi3_band(label)
            if not (band_low < low <= high <= band_high) or label_from_oahi3(low) != label:
                problems.append(f"oahi3 range {low}-{high} not inside the {label.name} band")
        if min(self.noise, self.amplitude, self.burst_rate_scale, self.burst_seconds) < 0:
            problems.append("noise, amplitude, burst rate and burst length must be non-negative")
        if problems:
            raise ValueError("inconsistent synthetic spec: " + "; ".join(problems))

    @property
    def sleep_window(self) -> tuple[float, float]:
        return self.awake_lead, self.duration - self.awake_tail

    def to_dict(self) -> dict:
        data = asdict(self)
        data["channels"] = {k: list(v) for k, v in self.channels.items()}
        return data

    @classmethod
    def from_dict(cls, data: dict) -> SynthSpec:
        data = dict(data)
        for key in ("subjects_per_class", "base_frequencies", "burst_amplitudes"):
            if key in data and not isinstance(data[key], int):
                data[key] = tuple(data[key])
        if "oahi3_ranges" in data:
            data["oahi3_ranges"] = tuple(tuple(r) for r in data["oahi3_ranges"])
        if "channels" in data:
            data["channels"] = {k.upper(): tuple(v) for k, v in data["channels"].items()}
        if "rates" in data:
            data["rates"] = {k.upper(): float(v) for k, v in data["rates"].items()}
        return cls(**data)


@dataclass(frozen=True)
class ChannelParams:
    label: str
    group: str
    rate: float
    frequency: float
    phase: float
    gain: float
    offset: float


@dataclass(frozen=True)
class SubjectPlan:
    subject_id: str
    label: SeverityLabel
    oahi3: float
    window: SleepWindow
    burst_onsets: tuple[float, ...]
    channels: tuple[ChannelParams, ...]
    seed: int


def plan_cohort(spec: SynthSpec) -> list[SubjectPlan]:
    """Draw every per-subject parameter; signal rendering is separate."""
    root = SplitMix64(spec.seed)
    onset, offset = spec.sleep_window
    plans = []
    for label, count in zip(SeverityLabel, spec.subjects_per_class):
        for i in range(1, count + 1):
            sid = f"{label.name}{i:03d}"
            rng = root.spawn(sid)
            low, high = spec.oahi3_ranges[label]
            oahi3 = float(low + (high - low) * rng.random())
            hours = (offset - onset) / 3600.0
            n_bursts = int(round(oahi3 * spec.burst_rate_scale * hours))
            latest = max(offset - spec.burst_seconds, onset)
            onsets = tuple(sorted(float(t) for t in rng.uniform(n_bursts, onset, latest)))
            channels = []
            for group, labels in spec.channels.items():
                for ch in labels:
                    jitter = 1 + spec.frequency_jitter * (2 * rng.random() - 1)
                    channels.append(
                        ChannelParams(
                            label=ch,
                            group=group,
                            rate=float(spec.rates[group]),
                            frequency=spec.base_frequencies[label] * jitter,
                            phase=2 * math.pi * rng.random(),
                            gain=0.5 + rng.random(),
                            offset=100.0 * rng.random() - 50.0,
                        )
                    )
            plans.append(
                SubjectPlan(sid, label, oahi3, SleepWindow(sid, onset, offset), onsets, tuple(channels), rng.next_u64())
            )
    return plans


def clean_waveform(spec: SynthSpec, plan: SubjectPlan, channel: ChannelParams) -> np.ndarray:
    """Noise-free signal of one channel in physical units."""
    n = int(round(spec.duration * channel.rate))
    t = np.arange(n) / channel.rate
    scale = spec.amplitude * channel.gain
    x = np.sin(2 * np.pi * channel.frequency * t + channel.phase)
    burst_len = int(round(spec.burst_seconds * channel.rate))
    if plan.burst_onsets and burst_len > 1 and spec.burst_amplitudes[plan.label] > 0:
        envelope = np.hanning(burst_len)
        carrier_hz = min(spec.burst_frequency, channel.rate / 4)
        tb = np.arange(burst_len) / channel.rate
        burst = spec.burst_amplitudes[plan.label] * envelope * np.sin(2 * np.pi * carrier_hz * tb)
        for start_s in plan.burst_onsets:
            start = int(start_s * channel.rate)
            stop = min(start + burst_len, n)
            x[start:stop] += burst[: stop - start]
    return scale * x + channel.offset


def render_subject(spec: SynthSpec, plan: SubjectPlan) -> list[np.ndarray]:
    """Physical-unit samples for every channel of one subject, in plan order."""
    rng = SplitMix64(plan.seed)
    out = []
    for channel in plan.channels:
        x = clean_waveform(spec, plan, channel)
        if spec.noise > 0:
            t = np.arange(len(x)) / channel.rate
            awake = (t < plan.window.sleep_onset) | (t >= plan.window.sleep_offset)
            level = np.where(awake, spec.noise * spec.awake_noise_factor, spec.noise)
            x = x + spec.amplitude * channel.gain * level * rng.spawn(channel.label).normal(len(x))
        out.append(x)
    return out


def signal_specs(spec: SynthSpec, plan: SubjectPlan) -> list[SignalSpec]:
    return [
        SignalSpec(
            label=ch.label,
            samples_per_record=int(round(ch.rate * spec.record_duration)),
            physical_min=-PHYSICAL_RANGE,
            physical_max=PHYSICAL_RANGE,
            physical_dimension=_UNITS.get(ch.group, ""),
            transducer=f"synthetic {ch.group}",
            prefiltering="none",
        )
        for ch in plan.channels
    ]


@dataclass
class GeneratedCohort:
    root: Path
    manifest: Path
    sleep_windows: Path
    cohort: Cohort
    plans: list[SubjectPlan]


def generate_cohort(spec: SynthSpec, out_dir: str | Path, workers: int = 1) -> GeneratedCohort:
    """Write one EDF per subject plus ``manifest.csv``, ``sleep_windows.csv`` and ``synth_spec.json``."""
    out = Path(out_dir)
    try:
        (out / "edf").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    plans = plan_cohort(spec)

    def write(plan: SubjectPlan) -> Subject:
        path = out / "edf" / f"{plan.subject_id}.edf"
        write_edf(
            path,
            signal_specs(spec, plan),
            render_subject(spec, plan),
            spec.record_duration,
            patient_id=f"{plan.subject_id} X X X",
        )
        return Subject(plan.subject_id, path, plan.oahi3, plan.label)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            subjects = list(pool.map(write, plans))
    else:
        subjects = [write(p) for p in plans]

    cohort = Cohort(subjects)
    manifest = out / "manifest.csv"
    windows = out / "sleep_windows.csv"
    write_manifest(cohort, manifest)
    write_sleep_windows([p.window for p in plans], windows)
    (out / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    logger.info("wrote %d synthetic subjects to %s", len(plans), out)
    return GeneratedCohort(out, manifest, windows, cohort, plans)
