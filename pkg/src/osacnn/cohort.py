"""Severity labelling from oahi3 and class balancing by under-sampling."""

from __future__ import annotations

import csv
import enum
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .rng import SplitMix64


class SeverityLabel(enum.IntEnum):
    NL = 0
    MIN = 1
    MOD = 2
    SV = 3

    @classmethod
    def parse(cls, text: str | int) -> SeverityLabel:
        if isinstance(text, int):
            return cls(text)
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown severity label {text!r}") from None


NUM_CLASSES = len(SeverityLabel)

# upper band edges (inclusive): NL <= 1 < MIN <= 5 < MOD <= 10 < SV
OAHI3_UPPER = (1.0, 5.0, 10.0)


def label_from_oahi3(oahi3: float) -> SeverityLabel:
    """Map an obstructive apnea-hypopnea index to a severity class.

    Upper edges are inclusive. An index of exactly 0 is labelled NL.
    """
    if not math.isfinite(oahi3) or oahi3 < 0:
        raise ValueError(f"oahi3 must be finite and non-negative, got {oahi3!r}")
    for label, upper in zip(SeverityLabel, OAHI3_UPPER):
        if oahi3 <= upper:
            return label
    return SeverityLabel.SV


def oahi3_band(label: SeverityLabel) -> tuple[float, float]:
    """Open-closed interval ``(low, high]`` of oahi3 values for ``label``."""
    edges = (0.0, *OAHI3_UPPER, math.inf)
    return edges[label], edges[label + 1]


@dataclass(frozen=True)
class Subject:
    subject_id: str
    edf_path: Path
    oahi3: float
    label: SeverityLabel

    @classmethod
    def from_oahi3(cls, subject_id: str, edf_path: str | Path, oahi3: float) -> Subject:
        return cls(subject_id, Path(edf_path), float(oahi3), label_from_oahi3(float(oahi3)))

    def __post_init__(self) -> None:
        expected = label_from_oahi3(self.oahi3)
        if self.label != expected:
            raise ValueError(
                f"subject {self.subject_id}: label {self.label.name} disagrees with oahi3={self.oahi3} "
                f"(expected {expected.name})"
            )


@dataclass(frozen=True)
class Cohort:
    subjects: tuple[Subject, ...]

    def __init__(self, subjects: Iterable[Subject]) -> None:
        subjects = tuple(subjects)
        ids = [s.subject_id for s in subjects]
        duplicates = sorted(k for k, v in Counter(ids).items() if v > 1)
        if duplicates:
            raise ValueError(f"duplicate subject ids: {duplicates}")
        object.__setattr__(self, "subjects", subjects)

    def __len__(self) -> int:
        return len(self.subjects)

    def __iter__(self):
        return iter(self.subjects)

    @property
    def per_class_counts(self) -> dict[SeverityLabel, int]:
        counts = Counter(s.label for s in self.subjects)
        return {label: counts.get(label, 0) for label in SeverityLabel}

    @property
    def ids(self) -> list[str]:
        return [s.subject_id for s in self.subjects]

    def by_id(self) -> dict[str, Subject]:
        return {s.subject_id: s for s in self.subjects}

    def of_class(self, label: SeverityLabel) -> list[Subject]:
        return [s for s in self.subjects if s.label == label]

    def subset(self, ids: Iterable[str]) -> Cohort:
        keep = set(ids)
        missing = keep - set(self.ids)
        if missing:
            raise KeyError(f"subjects not in cohort: {sorted(missing)}")
        return Cohort(s for s in self.subjects if s.subject_id in keep)


def undersample(cohort: Cohort, per_class: int = 8, seed: int = 0) -> Cohort:
    """Keep ``per_class`` subjects of every class, chosen uniformly without replacement.

    Classes that already have exactly ``per_class`` subjects are kept whole, so
    the result does not depend on the seed for them. Selected subjects keep
    their original manifest order.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    counts = cohort.per_class_counts
    short = {label.name: n for label, n in counts.items() if n < per_class}
    if short:
        raise ValueError(f"classes with fewer than {per_class} subjects: {short}")
    rng = SplitMix64(seed)
    keep: set[str] = set()
    for label in SeverityLabel:
        members = cohort.of_class(label)
        chosen = members if len(members) == per_class else rng.spawn(label.name).sample(members, per_class)
        keep.update(s.subject_id for s in chosen)
    return Cohort(s for s in cohort.subjects if s.subject_id in keep)


MANIFEST_COLUMNS = ("subject_id", "edf_path", "oahi3")


def read_manifest(path: str | Path) -> Cohort:
    """Load ``subject_id,edf_path,oahi3[,label]`` rows.

    Relative EDF paths resolve against the manifest's directory.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: manifest missing columns {missing}")
        subjects = []
        for lineno, row in enumerate(reader, start=2):
            try:
                oahi3 = float(row["oahi3"])
                subject = Subject.from_oahi3(row["subject_id"].strip(), path.parent / row["edf_path"].strip(), oahi3)
                if row.get("label"):
                    given = SeverityLabel.parse(row["label"])
                    if given != subject.label:
                        raise ValueError(
                            f"label {given.name} disagrees with oahi3={oahi3} ({subject.label.name})"
                        )
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            subjects.append(subject)
    return Cohort(subjects)


def write_manifest(cohort: Cohort, path: str | Path, relative_to: str | Path | None = None) -> None:
    path = Path(path)
    base = Path(relative_to) if relative_to is not None else path.parent
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow((*MANIFEST_COLUMNS, "label"))
        for s in cohort.subjects:
            try:
                edf = s.edf_path.relative_to(base)
            except ValueError:
                edf = s.edf_path
            writer.writerow((s.subject_id, edf.as_posix(), repr(s.oahi3), s.label.name))
