"""Confusion matrix and per-class precision / recall / F1."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .cohort import NUM_CLASSES, SeverityLabel


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (NUM_CLASSES, NUM_CLASSES):
            raise ValueError(f"confusion matrix must be {NUM_CLASSES}x{NUM_CLASSES}, got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: ConfusionMatrix) -> ConfusionMatrix:
        return ConfusionMatrix(self.counts + other.counts)

    def to_text(self) -> str:
        names = [label.name for label in SeverityLabel]
        lines = ["True\\Pred " + "".join(f"{n:>8}" for n in names)]
        for name, row in zip(names, self.counts):
            lines.append(f"{name:<10}" + "".join(f"{int(c):>8}" for c in row))
        return "\n".join(lines)


def confusion(predictions, labels) -> ConfusionMatrix:
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise ValueError(f"predictions {predictions.shape} and labels {labels.shape} must be equal-length 1-D")
    for name, arr in (("prediction", predictions), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= NUM_CLASSES):
            raise ValueError(f"{name} classes must lie in 0..{NUM_CLASSES - 1}")
    counts = np.bincount(labels * NUM_CLASSES + predictions, minlength=NUM_CLASSES * NUM_CLASSES)
    return ConfusionMatrix(counts.reshape(NUM_CLASSES, NUM_CLASSES))


@dataclass(frozen=True)
class ClassReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    accuracy: float
    support: np.ndarray
    loss: float | None = None
    # (metric, class name) pairs whose denominator was zero and were set to 0
    zero_division: tuple[tuple[str, str], ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "loss": self.loss,
            "classes": {
                label.name: {
                    "precision": float(self.precision[label]),
                    "recall": float(self.recall[label]),
                    "f1": float(self.f1[label]),
                    "support": int(self.support[label]),
                }
                for label in SeverityLabel
            },
            "zero_division": [list(item) for item in self.zero_division],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self, title: str = "") -> str:
        loss = "-" if self.loss is None else f"{self.loss:.4f}"
        header = f"{'Dataset':<10} {'Accuracy':>8} {'Loss':>8}  {'Class':<5} {'Precision':>9} {'Recall':>8} {'F1-Score':>8}"
        lines = [header]
        for i, label in enumerate(SeverityLabel):
            lead = f"{title:<10} {self.accuracy:>8.4f} {loss:>8}" if i == 0 else " " * 28
            lines.append(
                f"{lead}  {label.name:<5} {self.precision[i]:>9.4f} {self.recall[i]:>8.4f} {self.f1[i]:>8.4f}"
            )
        return "\n".join(lines)


def _ratio(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    zero = den == 0
    out = np.divide(num, den, out=np.zeros(num.shape, dtype=np.float64), where=~zero)
    return out, zero


def report(cm: ConfusionMatrix, loss: float | None = None) -> ClassReport:
    counts = cm.counts
    total = counts.sum()
    if total == 0:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(counts).astype(np.float64)
    precision, p_zero = _ratio(tp, counts.sum(axis=0).astype(np.float64))
    recall, r_zero = _ratio(tp, counts.sum(axis=1).astype(np.float64))
    f1, _ = _ratio(2 * precision * recall, precision + recall)
    flags = tuple(("precision", SeverityLabel(i).name) for i in np.flatnonzero(p_zero)) + tuple(
        ("recall", SeverityLabel(i).name) for i in np.flatnonzero(r_zero)
    )
    return ClassReport(
        precision=precision,
        recall=recall,
        f1=f1,
        accuracy=float(tp.sum() / total),
        support=counts.sum(axis=1),
        loss=loss,
        zero_division=flags,
    )
