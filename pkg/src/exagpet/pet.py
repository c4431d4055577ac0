"""Single-task pattern-verbalizer training.

The flow: a PvpModel scores labels through its pattern's masked slot
(label_score), training minimizes the cross-entropy of the softmax over
label scores (train_single), a weighted ensemble soft-labels unlabeled
instances (soft_label), and a fresh sequence classifier is distilled from
the soft labels with a temperature-softened KL loss (distill).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .backend import (
    Backend,
    LossSpec,
    MaskedSequence,
    OptimizerConfig,
    SegmentPair,
    TrainExample,
    softmax,
)
from .errors import ConfigurationError, DataError, UsageError
from .pvp import Pattern, Pvp, Verbalizer


@dataclass(frozen=True)
class TaskInstance:
    """One task input: ``a``/``b`` fill the pattern slots, ``role`` resolves
    a role-choice group, ``segments`` is the classifier-input view
    (defaults to (a, b))."""

    a: str
    b: str | None = None
    role: str | None = None
    label: int | None = None
    instance_id: str = ""
    segments: tuple[str, str | None] | None = None

    def classifier_input(self) -> SegmentPair:
        if self.segments is not None:
            return SegmentPair(self.segments[0], self.segments[1])
        return SegmentPair(self.a, self.b)


@dataclass
class PvpModel:
    """A backend bound to one pattern-verbalizer pair and a label order."""

    backend: Backend
    pattern: Pattern
    verbalizer: Verbalizer
    labels: tuple[int, ...]
    aggregation: str = "mean"

    def __post_init__(self):
        self.labels = tuple(self.labels)
        if not self.verbalizer.covers(self.labels):
            missing = set(self.labels) - set(self.verbalizer.mapping)
            raise ConfigurationError(f"verbalizer does not cover labels {sorted(missing)}")

    @classmethod
    def from_pvp(cls, backend: Backend, pvp: Pvp, labels: Sequence[int], aggregation="mean"):
        return cls(backend, pvp.pattern, pvp.verbalizer, tuple(labels), aggregation)

    def render(self, x: TaskInstance) -> MaskedSequence:
        return self.pattern.apply(
            x.a, b=x.b, role=x.role, mask_token=self.backend.vocabulary.mask_token
        )


def _aggregate(values: np.ndarray, how: str) -> float:
    if how == "mean":
        return float(values.mean())
    if how == "max":
        return float(values.max())
    if how == "logsumexp":
        m = values.max()
        return float(m + math.log(np.exp(values - m).sum()))
    raise UsageError(f"unknown aggregation {how!r}")


def label_score(model: PvpModel, x: TaskInstance) -> dict[int, float]:
    """Raw score per label: the aggregation (mean by default) of the
    mask-position scores of that label's verbalizer tokens."""
    seq = model.render(x)
    token_scores = model.backend.score_masked(seq, model.verbalizer.all_tokens())
    return {
        label: _aggregate(
            np.array([token_scores[t] for t in model.verbalizer.tokens(label)]),
            model.aggregation,
        )
        for label in model.labels
    }


def label_distribution(scores: Mapping[int, float]) -> dict[int, float]:
    """Softmax of the per-label scores."""
    if not scores:
        raise UsageError("scores must be non-empty")
    labels = list(scores)
    values = np.array([scores[l] for l in labels], dtype=float)
    if not np.all(np.isfinite(values)):
        raise UsageError("scores must be finite")
    probs = softmax(values)
    return {l: float(p) for l, p in zip(labels, probs)}


def predict_label(model: PvpModel, x: TaskInstance) -> int:
    """Argmax label; ties broken by label order."""
    scores = label_score(model, x)
    best = model.labels[0]
    for label in model.labels[1:]:
        if scores[label] > scores[best]:
            best = label
    return best


def class_weights(labels: Sequence[int], data: Iterable[TaskInstance]) -> dict[int, float]:
    """Inverse-frequency weights normalized to instance-mean 1: N/(K*n_l)."""
    counts = {l: 0 for l in labels}
    n = 0
    for inst in data:
        if inst.label not in counts:
            raise DataError(
                f"instance {inst.instance_id!r} has label {inst.label} outside {list(labels)}"
            )
        counts[inst.label] += 1
        n += 1
    k = len(labels)
    return {l: (n / (k * c) if c else 0.0) for l, c in counts.items()}


@dataclass(frozen=True)
class TrainConfig:
    """Pattern-training hyperparameters (supervised and PET stages)."""

    epochs: int = 10
    batch_size: int = 4
    learning_rate: float = 5.598e-5
    warmup_steps: int = 50
    weight_decay: float = 1e-3
    class_weighting: bool = True

    @classmethod
    def for_task(cls, task: str) -> "TrainConfig":
        # pair-inference uses the searched rate; strength and conclusion
        # classification default to 3e-5
        if task == "t1":
            return cls()
        return cls(learning_rate=3e-5)

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(
            learning_rate=self.learning_rate,
            warmup_steps=self.warmup_steps,
            weight_decay=self.weight_decay,
        )


@dataclass(frozen=True)
class DistillConfig:
    """Final-classifier distillation hyperparameters."""

    epochs: int = 3
    batch_size: int = 4
    learning_rate: float = 1e-5
    warmup_steps: int = 200
    weight_decay: float = 1e-2
    temperature: float = 2.0
    class_weighting: bool = True

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(
            learning_rate=self.learning_rate,
            warmup_steps=self.warmup_steps,
            weight_decay=self.weight_decay,
        )


class _Cycler:
    """Endless batches over a dataset, reshuffled each pass, seeded."""

    def __init__(self, data: Sequence, rng: np.random.Generator):
        if not data:
            raise UsageError("dataset must be non-empty")
        self.data = list(data)
        self.rng = rng
        self._queue: list = []

    def take(self, n: int) -> list:
        out = []
        while len(out) < n:
            if not self._queue:
                order = self.rng.permutation(len(self.data))
                self._queue = [self.data[i] for i in order]
            out.append(self._queue.pop(0))
        return out


def _one_hot_target(model: PvpModel, label: int) -> dict:
    return {
        model.verbalizer.tokens(l): (1.0 if l == label else 0.0) for l in model.labels
    }


def make_train_example(model: PvpModel, inst: TaskInstance, weight: float = 1.0) -> TrainExample:
    if inst.label is None:
        raise DataError(f"instance {inst.instance_id!r} is unlabeled")
    if inst.label not in model.labels:
        raise DataError(
            f"instance {inst.instance_id!r} has label {inst.label} outside {list(model.labels)}"
        )
    return TrainExample(
        inputs=model.render(inst),
        target=_one_hot_target(model, inst.label),
        weight=weight,
        instance_id=inst.instance_id,
    )


def train_single(
    model: PvpModel,
    data: Sequence[TaskInstance],
    hp: TrainConfig,
    seed: int = 0,
    log: list | None = None,
) -> PvpModel:
    """Cross-entropy fine-tuning of one PvpModel on labeled data.

    Runs epochs * ceil(N / batch_size) optimizer steps over seeded
    reshuffles, with inverse-frequency class weights when enabled.
    """
    if not data:
        raise UsageError("training data must be non-empty")
    weights = (
        class_weights(model.labels, data)
        if hp.class_weighting
        else {l: 1.0 for l in model.labels}
    )
    backend = model.backend
    backend.train()
    backend.configure_optimizer(hp.optimizer())
    loss_spec = LossSpec(kind="cross_entropy", aggregation=model.aggregation)
    rng = np.random.default_rng([seed, 2])
    cycler = _Cycler(data, rng)
    steps = hp.epochs * math.ceil(len(data) / hp.batch_size)
    for step in range(steps):
        batch = cycler.take(min(hp.batch_size, len(data)))
        examples = [make_train_example(model, inst, weights[inst.label]) for inst in batch]
        loss = backend.fine_tune_batch(examples, loss_spec)
        if log is not None:
            log.append(
                {"step": step, "task": "main", "loss": loss, "ids": [b.instance_id for b in batch]}
            )
    backend.eval()
    return model


def zero_shot_accuracy(model: PvpModel, data: Sequence[TaskInstance]) -> float:
    """Fraction of instances whose argmax label score matches the gold label."""
    if not data:
        raise UsageError("data must be non-empty")
    hits = sum(1 for inst in data if predict_label(model, inst) == inst.label)
    return hits / len(data)


# -- ensembles and soft labels -------------------------------------------------


@dataclass
class EnsembleSpec:
    members: list[PvpModel]
    weights: list[float]
    normalize: bool = False

    def __post_init__(self):
        if len(self.members) != len(self.weights):
            raise ConfigurationError(
                f"{len(self.members)} members but {len(self.weights)} weights"
            )
        if not self.members:
            raise ConfigurationError("ensemble must have at least one member")
        if any(w < 0 for w in self.weights):
            raise ConfigurationError("ensemble weights must be non-negative")
        if not any(w > 0 for w in self.weights):
            raise ConfigurationError("ensemble weights must not all be zero")

    def effective_weights(self) -> list[float]:
        if not self.normalize:
            return list(self.weights)
        total = sum(self.weights)
        return [w / total for w in self.weights]


@dataclass(frozen=True)
class SoftLabelRecord:
    instance_id: str
    scores: dict[int, float]
    member_scores: tuple[dict[int, float], ...]

    def to_dict(self) -> dict:
        return {
            "id": self.instance_id,
            "scores": {str(l): v for l, v in self.scores.items()},
            "member_scores": [
                {str(l): v for l, v in ms.items()} for ms in self.member_scores
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SoftLabelRecord":
        return cls(
            instance_id=d["id"],
            scores={int(l): float(v) for l, v in d["scores"].items()},
            member_scores=tuple(
                {int(l): float(v) for l, v in ms.items()} for ms in d["member_scores"]
            ),
        )


def soft_label(
    ensemble: EnsembleSpec, unlabeled: Sequence[TaskInstance], jobs: int = 1
) -> list[SoftLabelRecord]:
    """Weighted sum of member label scores for each unlabeled instance."""
    if not unlabeled:
        raise UsageError("unlabeled instances must be non-empty")
    weights = ensemble.effective_weights()
    labels = ensemble.members[0].labels
    for m in ensemble.members:
        if m.labels != labels:
            raise ConfigurationError("ensemble members disagree on the label space")
        m.backend.eval()

    def score_one(inst: TaskInstance) -> SoftLabelRecord:
        member_scores = tuple(label_score(m, inst) for m in ensemble.members)
        combined = {
            l: sum(w * ms[l] for w, ms in zip(weights, member_scores)) for l in labels
        }
        return SoftLabelRecord(inst.instance_id, combined, member_scores)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(score_one, unlabeled))
    return [score_one(inst) for inst in unlabeled]


def save_soft_labels(records: Iterable[SoftLabelRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def load_soft_labels(path: str | Path) -> list[SoftLabelRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(SoftLabelRecord.from_dict(json.loads(line)))
    return records


def distillation_targets(
    record: SoftLabelRecord, temperature: float, labels: Sequence[int]
) -> np.ndarray:
    """softmax(combined scores / temperature) in the given label order."""
    if temperature <= 0:
        raise UsageError("temperature must be positive")
    scores = np.array([record.scores[l] for l in labels], dtype=float)
    if not np.all(np.isfinite(scores)):
        raise DataError(f"non-finite soft-label scores for {record.instance_id!r}")
    return softmax(scores / temperature)


def train_classifier(
    backend: Backend,
    inputs: Sequence[SegmentPair],
    targets: Sequence[np.ndarray],
    labels: Sequence[int],
    loss_spec: LossSpec,
    epochs: int,
    batch_size: int,
    optimizer: OptimizerConfig,
    instance_weights: Sequence[float] | None = None,
    ids: Sequence[str] | None = None,
    seed: int = 0,
) -> Backend:
    """Shared head-training loop for distillation and the supervised baseline."""
    if len(inputs) != len(targets):
        raise UsageError("inputs and targets must align")
    if not inputs:
        raise UsageError("training data must be non-empty")
    n_labels = len(labels)
    if backend.num_labels != n_labels:
        raise ConfigurationError(
            f"backend head has {backend.num_labels} labels, task has {n_labels}"
        )
    weights = list(instance_weights) if instance_weights is not None else [1.0] * len(inputs)
    ids = list(ids) if ids is not None else [""] * len(inputs)
    examples = [
        TrainExample(
            inputs=inp,
            target={j: float(t[j]) for j in range(n_labels)},
            weight=w,
            instance_id=i,
        )
        for inp, t, w, i in zip(inputs, targets, weights, ids)
    ]
    backend.train()
    backend.configure_optimizer(optimizer)
    rng = np.random.default_rng([seed, 4])
    cycler = _Cycler(examples, rng)
    steps = epochs * math.ceil(len(examples) / batch_size)
    for _ in range(steps):
        batch = cycler.take(min(batch_size, len(examples)))
        backend.fine_tune_batch(batch, loss_spec)
    backend.eval()
    return backend


def distill(
    student: Backend,
    instances: Sequence[TaskInstance],
    records: Sequence[SoftLabelRecord],
    labels: Sequence[int],
    hp: DistillConfig,
    seed: int = 0,
) -> Backend:
    """Train a fresh classification head against temperature-softened
    ensemble scores with a KL loss."""
    if not records:
        raise UsageError("soft-label records must be non-empty")
    by_id = {inst.instance_id: inst for inst in instances}
    pairs = []
    for rec in records:
        inst = by_id.get(rec.instance_id)
        if inst is None:
            raise DataError(f"soft-label record {rec.instance_id!r} has no matching instance")
        pairs.append((inst, rec))
    labels = list(labels)
    targets = [distillation_targets(rec, hp.temperature, labels) for _, rec in pairs]
    if hp.class_weighting:
        argmax_labels = [labels[int(np.argmax(t))] for t in targets]
        counts = {l: max(1, argmax_labels.count(l)) for l in labels}
        n, k = len(argmax_labels), len(labels)
        cw = {l: n / (k * c) for l, c in counts.items()}
        instance_weights = [cw[l] for l in argmax_labels]
    else:
        instance_weights = None
    return train_classifier(
        student,
        inputs=[inst.classifier_input() for inst, _ in pairs],
        targets=targets,
        labels=labels,
        loss_spec=LossSpec(kind="kl", temperature=hp.temperature),
        epochs=hp.epochs,
        batch_size=hp.batch_size,
        optimizer=hp.optimizer(),
        instance_weights=instance_weights,
        ids=[rec.instance_id for _, rec in pairs],
        seed=seed,
    )


def train_supervised(
    backend: Backend,
    instances: Sequence[TaskInstance],
    labels: Sequence[int],
    epochs: int,
    batch_size: int,
    optimizer: OptimizerConfig,
    class_weighting: bool = True,
    seed: int = 0,
) -> Backend:
    """Plain supervised baseline: one-hot class-weighted cross-entropy on
    the classification head (no patterns, no unlabeled data)."""
    labels = list(labels)
    weights = (
        class_weights(labels, instances) if class_weighting else {l: 1.0 for l in labels}
    )
    targets = [
        np.array([1.0 if l == inst.label else 0.0 for l in labels]) for inst in instances
    ]
    return train_classifier(
        backend,
        inputs=[inst.classifier_input() for inst in instances],
        targets=targets,
        labels=labels,
        loss_spec=LossSpec(kind="cross_entropy"),
        epochs=epochs,
        batch_size=batch_size,
        optimizer=optimizer,
        instance_weights=[weights[inst.label] for inst in instances],
        ids=[inst.instance_id for inst in instances],
        seed=seed,
    )


def classify_argmax(backend: Backend, inst: TaskInstance, labels: Sequence[int]) -> int:
    pair = inst.classifier_input()
    logits = backend.classify(pair.first, pair.second)
    return list(labels)[int(np.argmax(logits))]
