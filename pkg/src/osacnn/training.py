"""Subject-level splitting and the mini-batch training loop."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .cohort import Cohort, SeverityLabel
from .nn import Adam, Model, NonFiniteGradient
from .pipeline import SegmentTensor
from .rng import SplitMix64

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitPlan:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int

    def __post_init__(self) -> None:
        sets = {"train": set(self.train), "val": set(self.val), "test": set(self.test)}
        for a, b in (("train", "val"), ("train", "test"), ("val", "test")):
            overlap = sets[a] & sets[b]
            if overlap:
                raise ValueError(f"subjects in both {a} and {b}: {sorted(overlap)}")

    def subset(self, name: str) -> tuple[str, ...]:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split set {name!r}")
        return getattr(self, name)

    def to_json(self) -> str:
        return json.dumps(
            {"seed": self.seed, "test": list(self.test), "train": list(self.train), "val": list(self.val)},
            indent=2,
            sort_keys=True,
        ) + "\n"

    @classmethod
    def from_json(cls, text: str) -> SplitPlan:
        data = json.loads(text)
        return cls(tuple(data["train"]), tuple(data["val"]), tuple(data["test"]), int(data["seed"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> SplitPlan:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def stratified_split(
    cohort: Cohort,
    seed: int,
    *,
    per_class: int = 8,
    test_per_class: int = 2,
    n_val: int = 6,
) -> SplitPlan:
    """Two-level stratified subject split.

    First ``test_per_class`` subjects of each class go to test. The
    remainder is split into validation (``n_val`` subjects) and training,
    spreading validation as evenly over the classes as integers allow; which
    classes receive the extra validation subjects is drawn at random.
    """
    counts = cohort.per_class_counts
    if any(n != per_class for n in counts.values()):
        raise ValueError(
            f"stratified split needs exactly {per_class} subjects per class, got "
            + ", ".join(f"{k.name}={v}" for k, v in counts.items())
        )
    remaining = per_class - test_per_class
    if not 0 < test_per_class < per_class or not 0 <= n_val <= remaining * len(SeverityLabel):
        raise ValueError("test/validation sizes incompatible with the cohort")
    rng = SplitMix64(seed)
    base, extra = divmod(n_val, len(SeverityLabel))
    extra_classes = set(rng.spawn("val-extra").sample(list(SeverityLabel), extra))

    train, val, test = [], [], []
    for label in SeverityLabel:
        members = [s.subject_id for s in cohort.of_class(label)]
        order = rng.spawn(f"class-{label.name}").sample(members, len(members))
        k_val = base + (label in extra_classes)
        test += order[:test_per_class]
        val += order[test_per_class : test_per_class + k_val]
        train += order[test_per_class + k_val :]
    return SplitPlan(tuple(train), tuple(val), tuple(test), seed)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    iterations: int = 1000
    batch_size: int = 32
    dropout_keep: float = 0.5
    seed: int = 0
    eval_every: int = 50
    train_eval_subset: int = 2048
    eval_batch_size: int = 256

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.eval_every < 1 or self.iterations < 0:
            raise ValueError(f"invalid training configuration: {self}")
        if not 0 < self.dropout_keep <= 1:
            raise ValueError(f"dropout_keep must be in (0, 1], got {self.dropout_keep}")

    def to_dict(self) -> dict:
        return asdict(self)


class CurvePoint(NamedTuple):
    iteration: int
    train_acc: float
    train_loss: float
    val_acc: float
    val_loss: float


@dataclass
class LearningCurve:
    points: list[CurvePoint] = field(default_factory=list)

    def append(self, point: CurvePoint) -> None:
        if self.points and point.iteration <= self.points[-1].iteration:
            raise ValueError("curve iterations must strictly increase")
        self.points.append(point)

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, i: int) -> CurvePoint:
        return self.points[i]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CurvePoint._fields)
        for p in self.points:
            writer.writerow((p.iteration, *(repr(float(v)) for v in p[1:])))
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


class TrainingDiverged(FloatingPointError):
    """Loss or gradient became non-finite; the model holds the last recorded parameters."""

    def __init__(self, iteration: int, reason: str) -> None:
        self.iteration = iteration
        super().__init__(f"training diverged at iteration {iteration}: {reason}")


class Evaluation(NamedTuple):
    loss: float
    accuracy: float
    predictions: np.ndarray
    probabilities: np.ndarray


def evaluate(model: Model, tensor: SegmentTensor, batch_size: int = 256) -> Evaluation:
    """Eval-mode loss and accuracy; never touches the parameters."""
    if len(tensor) == 0:
        raise ValueError("cannot evaluate on an empty tensor")
    proba = model.predict_proba(tensor.values, batch_size=batch_size).astype(np.float64)
    labels = tensor.labels.astype(np.int64)
    picked = np.clip(proba[np.arange(len(labels)), labels], np.finfo(np.float64).tiny, None)
    predictions = proba.argmax(axis=1)
    return Evaluation(
        loss=float(-np.mean(np.log(picked))),
        accuracy=float(np.mean(predictions == labels)),
        predictions=predictions,
        probabilities=proba,
    )


def _check_disjoint(train: SegmentTensor, val: SegmentTensor) -> None:
    overlap = set(train.subject_ids.tolist()) & set(val.subject_ids.tolist())
    if overlap:
        raise ValueError(f"train and validation tensors share subjects: {sorted(overlap)}")


def train(
    model: Model,
    train_tensor: SegmentTensor,
    val_tensor: SegmentTensor,
    config: TrainConfig,
    adam: Adam | None = None,
) -> tuple[Model, LearningCurve]:
    """Mini-batch Adam on uniformly drawn (with replacement) training segments.

    The curve gets a point before the first step and every ``eval_every``
    steps (plus the last step). Training accuracy/loss are measured on a fixed
    random subset of at most ``train_eval_subset`` segments. Pass ``adam`` to
    resume from, or keep, the optimizer state; it is updated in place.
    """
    _check_disjoint(train_tensor, val_tensor)
    if len(train_tensor) == 0:
        raise ValueError("training tensor is empty")
    for name, t in (("train", train_tensor), ("val", val_tensor)):
        if t.values.shape[1:] != (model.seq_len, model.in_channels):
            raise ValueError(
                f"{name} tensor segments are {t.values.shape[1:]}, model expects ({model.seq_len}, {model.in_channels})"
            )

    rng = SplitMix64(config.seed)
    batches = rng.spawn("batches")
    dropout = model.dropout
    if dropout is not None:
        dropout.keep = config.dropout_keep
        dropout.rng = rng.spawn("dropout")
        model.arch = model.arch.replace(keep=config.dropout_keep)
    if adam is None:
        adam = Adam(lr=config.learning_rate)
    else:
        adam.lr = config.learning_rate

    n = len(train_tensor)
    if n > config.train_eval_subset:
        subset = np.sort(np.array(rng.spawn("train-subset").sample(range(n), config.train_eval_subset)))
        train_eval = SegmentTensor(
            train_tensor.values[subset], train_tensor.labels[subset], train_tensor.subject_ids[subset]
        )
    else:
        train_eval = train_tensor

    x_all = train_tensor.values
    y_all = train_tensor.labels.astype(np.int64)
    curve = LearningCurve()
    params = model.params()

    def record(iteration: int) -> None:
        tr = evaluate(model, train_eval, config.eval_batch_size)
        va = evaluate(model, val_tensor, config.eval_batch_size) if len(val_tensor) else None
        point = CurvePoint(
            iteration,
            tr.accuracy,
            tr.loss,
            va.accuracy if va else math.nan,
            va.loss if va else math.nan,
        )
        curve.append(point)
        logger.info(
            "iter %d  train acc %.4f loss %.4f  val acc %.4f loss %.4f", *point
        )

    record(0)
    last_good = model.state()
    for iteration in range(1, config.iterations + 1):
        idx = batches.integers(n, config.batch_size)
        loss = model.loss_and_grads(x_all[idx], y_all[idx], train=True)
        try:
            if not math.isfinite(loss):
                raise NonFiniteGradient(f"loss is {loss}")
            adam.step(params, model.grads())
        except NonFiniteGradient as exc:
            model.load_state(last_good)
            raise TrainingDiverged(iteration, str(exc)) from exc
        if iteration % config.eval_every == 0 or iteration == config.iterations:
            record(iteration)
            last_good = model.state()
    return model, curve
