"""Multi-task pattern training.

Each ensemble member owns one backbone and trains on both the main and the
auxiliary pattern of its tuple: every batch draws a task, renders the batch
through that task's pattern, and steps on the task-weighted cross-entropy.
Soft labeling, distillation, and evaluation then run on the main task only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .backend import Backend, LossSpec, MaskedSequence, OptimizerConfig, TrainExample
from .errors import ConfigurationError, StageError, UsageError
from .evaluation import EvalReport, macro_prf
from .pet import (
    DistillConfig,
    EnsembleSpec,
    PvpModel,
    SoftLabelRecord,
    TaskInstance,
    TrainConfig,
    _Cycler,
    class_weights,
    classify_argmax,
    distill,
    make_train_example,
    soft_label,
    zero_shot_accuracy,
)
from .pvp import PvpTuple


def alpha_aux(size_main: int, size_aux: int) -> float:
    """Auxiliary loss weight: min(2, |D_main| / |D_aux|)."""
    if size_main < 1 or size_aux < 1:
        raise UsageError("dataset sizes must be >= 1")
    return min(2.0, size_main / size_aux)


@dataclass
class TaskSpec:
    """Everything one multi-task run needs."""

    main_task: str
    train: list[TaskInstance]
    unlabeled: list[TaskInstance]
    tuples: list[PvpTuple]
    main_labels: tuple[int, ...]
    aux_task: str | None = None
    aux_train: list[TaskInstance] | None = None
    aux_labels: tuple[int, ...] | None = None
    alpha_main: float = 1.0
    alpha_aux: float | None = None  # None -> min(2, |D_m|/|D_a|)
    test: list[TaskInstance] | None = None

    def __post_init__(self):
        if self.alpha_main <= 0:
            raise ConfigurationError("alpha_main must be > 0")
        if self.alpha_aux is not None and self.alpha_aux < 0:
            raise ConfigurationError("alpha_aux must be >= 0")
        if self.aux_train and self.aux_labels is None:
            raise ConfigurationError("auxiliary data requires aux_labels")
        for t in self.tuples:
            if not t.main.verbalizer.covers(self.main_labels):
                raise ConfigurationError(
                    f"tuple {t.index}: main verbalizer does not cover the main label space"
                )
            if self.aux_train and not t.auxiliary.verbalizer.covers(self.aux_labels):
                raise ConfigurationError(
                    f"tuple {t.index}: auxiliary verbalizer does not cover the aux label space"
                )

    def resolved_alpha_aux(self) -> float | None:
        if not self.aux_train:
            return None
        if self.alpha_aux is not None:
            return self.alpha_aux
        return alpha_aux(len(self.train), len(self.aux_train))

    def without_aux(self) -> "TaskSpec":
        return replace(self, aux_task=None, aux_train=None, aux_labels=None, alpha_aux=None)


@dataclass(frozen=True)
class PipelineConfig:
    train: TrainConfig = TrainConfig()
    distill: DistillConfig = DistillConfig()
    aggregation: str = "mean"
    normalize_weights: bool = False
    sampling: str = "uniform"  # or "proportional"
    include_zero_alpha_batches: bool = False
    jobs: int = 1


def task_selection(
    seed: int,
    sampling: str = "uniform",
    size_main: int | None = None,
    size_aux: int | None = None,
) -> Iterator[str]:
    """Seeded endless stream of per-batch task choices."""
    rng = np.random.default_rng([seed, 1])
    if sampling == "uniform":
        p_main = 0.5
    elif sampling == "proportional":
        if not size_main or not size_aux:
            raise UsageError("proportional sampling needs both dataset sizes")
        p_main = size_main / (size_main + size_aux)
    else:
        raise UsageError(f"unknown sampling {sampling!r}")
    while True:
        yield "main" if rng.random() < p_main else "aux"


def train_mtpet_member(
    spec: TaskSpec,
    tuple_index: int,
    hp: TrainConfig,
    seed: int,
    backend: Backend,
    aggregation: str = "mean",
    sampling: str = "uniform",
    include_zero_alpha_batches: bool = False,
    log: list | None = None,
) -> PvpModel:
    """Train one ensemble member on its main and auxiliary patterns.

    The returned model is the member's main-task view (the backbone is
    shared with the auxiliary pattern during training). When the auxiliary
    task is absent, this degenerates to plain single-task training.
    """
    if not (0 <= tuple_index < len(spec.tuples)):
        raise ConfigurationError(
            f"tuple index {tuple_index} outside 0..{len(spec.tuples) - 1}"
        )
    pvp_tuple = spec.tuples[tuple_index]
    main_model = PvpModel.from_pvp(backend, pvp_tuple.main, spec.main_labels, aggregation)
    alpha_a = spec.resolved_alpha_aux()
    aux_active = bool(spec.aux_train) and (
        (alpha_a or 0) > 0 or include_zero_alpha_batches
    )
    if aux_active:
        aux_model = PvpModel.from_pvp(backend, pvp_tuple.auxiliary, spec.aux_labels, aggregation)

    main_weights = (
        class_weights(spec.main_labels, spec.train)
        if hp.class_weighting
        else {l: 1.0 for l in spec.main_labels}
    )
    backend.train()
    backend.configure_optimizer(hp.optimizer())
    loss_spec = LossSpec(kind="cross_entropy", aggregation=aggregation)

    if not aux_active:
        cycler = _Cycler(spec.train, np.random.default_rng([seed, 2]))
        steps = hp.epochs * math.ceil(len(spec.train) / hp.batch_size)
        for step in range(steps):
            batch = cycler.take(min(hp.batch_size, len(spec.train)))
            examples = [
                make_train_example(main_model, inst, spec.alpha_main * main_weights[inst.label])
                for inst in batch
            ]
            loss = backend.fine_tune_batch(examples, loss_spec)
            if log is not None:
                log.append(
                    {
                        "step": step,
                        "task": "main",
                        "loss": loss,
                        "ids": [b.instance_id for b in batch],
                    }
                )
        backend.eval()
        return main_model

    aux_weights = (
        class_weights(spec.aux_labels, spec.aux_train)
        if hp.class_weighting
        else {l: 1.0 for l in spec.aux_labels}
    )
    choices = task_selection(seed, sampling, len(spec.train), len(spec.aux_train))
    cyclers = {
        "main": _Cycler(spec.train, np.random.default_rng([seed, 2])),
        "aux": _Cycler(spec.aux_train, np.random.default_rng([seed, 3])),
    }
    models = {"main": main_model, "aux": aux_model}
    alphas = {"main": spec.alpha_main, "aux": alpha_a}
    weight_maps = {"main": main_weights, "aux": aux_weights}
    datasets = {"main": spec.train, "aux": spec.aux_train}

    total = len(spec.train) + len(spec.aux_train)
    steps = hp.epochs * math.ceil(total / hp.batch_size)
    for step in range(steps):
        task = next(choices)
        batch = cyclers[task].take(min(hp.batch_size, len(datasets[task])))
        alpha = alphas[task]
        if alpha == 0:
            # zero task weight: zero loss and no parameter change
            loss = 0.0
        else:
            examples = [
                make_train_example(models[task], inst, alpha * weight_maps[task][inst.label])
                for inst in batch
            ]
            loss = backend.fine_tune_batch(examples, loss_spec)
        if log is not None:
            log.append(
                {
                    "step": step,
                    "task": task,
                    "loss": loss,
                    "ids": [b.instance_id for b in batch],
                }
            )
    backend.eval()
    return main_model


@dataclass
class SeedResult:
    seed: int
    weights: list[float]
    precision: float
    recall: float
    f1: float
    report: EvalReport | None = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "weights": self.weights,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


@dataclass
class RunReport:
    members: list[dict]
    seeds: list[SeedResult]
    mean: dict

    def to_dict(self) -> dict:
        return {
            "members": self.members,
            "seeds": [s.to_dict() for s in self.seeds],
            "mean": self.mean,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


@dataclass
class RunOutcome:
    """Report plus in-memory artifacts of a pipeline run."""

    report: RunReport
    students: dict[int, Backend]
    soft_labels: dict[int, list[SoftLabelRecord]]
    predictions: dict[int, list[int]]


def _stage(name: str, member: int | None = None):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, StageError):
                raise StageError(name, member, exc) from exc
            return False

    return _Ctx()


def run_mtpet(
    spec: TaskSpec,
    seeds: Sequence[int],
    backend_factory: Callable[[], Backend],
    student_factory: Callable[[], Backend],
    config: PipelineConfig = PipelineConfig(),
) -> RunOutcome:
    """The full pipeline: train one member per tuple, weight members by
    zero-shot train accuracy, soft-label the unlabeled pool on the main
    task only, distill a final classifier, and evaluate per seed."""
    if not seeds:
        raise UsageError("at least one seed is required")
    if not spec.unlabeled:
        raise UsageError("the unlabeled pool must be non-empty")
    if not spec.test:
        raise UsageError("an evaluation set is required")
    alpha_a = spec.resolved_alpha_aux()
    if alpha_a == 0 and not config.include_zero_alpha_batches:
        # a zero-weight auxiliary task is single-task training
        spec = spec.without_aux()

    seed_results: list[SeedResult] = []
    students: dict[int, Backend] = {}
    soft: dict[int, list[SoftLabelRecord]] = {}
    predictions: dict[int, list[int]] = {}
    golds = [t.label for t in spec.test]

    for seed in seeds:
        members: list[PvpModel] = []
        weights: list[float] = []
        for i in range(len(spec.tuples)):
            with _stage("member-setup", i):
                backend = backend_factory()
                model = PvpModel.from_pvp(
                    backend, spec.tuples[i].main, spec.main_labels, config.aggregation
                )
            with _stage("zero-shot-weights", i):
                weights.append(zero_shot_accuracy(model, spec.train))
            with _stage("member-training", i):
                train_mtpet_member(
                    spec,
                    i,
                    config.train,
                    seed,
                    backend,
                    aggregation=config.aggregation,
                    sampling=config.sampling,
                    include_zero_alpha_batches=config.include_zero_alpha_batches,
                )
            members.append(model)
        with _stage("soft-labeling"):
            ensemble = EnsembleSpec(members, weights, normalize=config.normalize_weights)
            records = soft_label(ensemble, spec.unlabeled, jobs=config.jobs)
        with _stage("distillation"):
            student = student_factory()
            distill(student, spec.unlabeled, records, spec.main_labels, config.distill, seed)
        with _stage("evaluation"):
            preds = [classify_argmax(student, t, spec.main_labels) for t in spec.test]
            report = macro_prf(preds, golds, labels=spec.main_labels)
        seed_results.append(
            SeedResult(
                seed=seed,
                weights=list(weights),
                precision=report.macro_precision,
                recall=report.macro_recall,
                f1=report.macro_f1,
                report=report,
            )
        )
        students[seed] = student
        soft[seed] = records
        predictions[seed] = preds

    n_members = len(spec.tuples)
    member_rows = [
        {
            "pattern_index": i,
            "weight": sum(r.weights[i] for r in seed_results) / len(seed_results),
        }
        for i in range(n_members)
    ]
    mean = {
        "precision": sum(r.precision for r in seed_results) / len(seed_results),
        "recall": sum(r.recall for r in seed_results) / len(seed_results),
        "f1": sum(r.f1 for r in seed_results) / len(seed_results),
    }
    report = RunReport(members=member_rows, seeds=seed_results, mean=mean)
    return RunOutcome(report, students, soft, predictions)


def run_pet(
    spec: TaskSpec,
    seeds: Sequence[int],
    backend_factory: Callable[[], Backend],
    student_factory: Callable[[], Backend],
    config: PipelineConfig = PipelineConfig(),
) -> RunOutcome:
    """Single-task degenerate case: no auxiliary data, no task sampling."""
    return run_mtpet(spec.without_aux(), seeds, backend_factory, student_factory, config)


@dataclass(frozen=True)
class MlmConfig:
    mask_rate: float = 0.15
    epochs: int = 1
    batch_size: int = 4
    learning_rate: float = 3e-5
    warmup_steps: int = 0
    weight_decay: float = 0.0


def mlm_domain_adapt(
    backend: Backend, texts: Sequence[str], hp: MlmConfig, seed: int = 0
) -> Backend:
    """Random-masking language-model pass over raw in-domain text.

    Each selected position yields one single-mask sequence whose target is
    the original token (one-hot over the non-mask vocabulary). Tokens
    outside the backend vocabulary are never masked.
    """
    if not texts:
        raise UsageError("text corpus must be non-empty")
    if not (0 < hp.mask_rate <= 1):
        raise UsageError("mask_rate must be in (0, 1]")
    vocab = backend.vocabulary
    candidates = [t for t in vocab.tokens if t != vocab.mask_token]
    rng = np.random.default_rng([seed, 5])
    backend.train()
    backend.configure_optimizer(
        OptimizerConfig(
            learning_rate=hp.learning_rate,
            warmup_steps=hp.warmup_steps,
            weight_decay=hp.weight_decay,
        )
    )
    loss_spec = LossSpec(kind="cross_entropy")
    examples: list[TrainExample] = []
    for epoch in range(hp.epochs):
        order = rng.permutation(len(texts))
        for ti in order:
            tokens = texts[ti].split()
            for pos, tok in enumerate(tokens):
                if tok not in vocab or tok == vocab.mask_token:
                    continue
                if rng.random() >= hp.mask_rate:
                    continue
                masked = tokens.copy()
                masked[pos] = vocab.mask_token
                try:
                    seq = MaskedSequence(" ".join(masked), None, vocab.mask_token)
                except Exception:
                    continue  # e.g. the text already contains a sentinel
                examples.append(
                    TrainExample(
                        inputs=seq,
                        target={c: (1.0 if c == tok else 0.0) for c in candidates},
                        instance_id=f"mlm:{ti}:{pos}",
                    )
                )
                if len(examples) == hp.batch_size:
                    backend.fine_tune_batch(examples, loss_spec)
                    examples = []
    if examples:
        backend.fine_tune_batch(examples, loss_spec)
    backend.eval()
    return backend
