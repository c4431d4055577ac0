"""Shared fixtures: the synthetic marker corpus plus oracle mock factories."""

from dataclasses import replace

import pytest

from exagpet.multitask import PipelineConfig, TaskSpec
from exagpet.pet import DistillConfig, TrainConfig
from exagpet.pvp import registry
from exagpet.synthetic import (
    make_pair_corpus,
    make_strength_records,
    oracle_backend_factory,
    student_backend_factory,
)
from exagpet.tasks import (
    EXAGGERATION_LABELS,
    STRENGTH_LABELS,
    t1_instances,
    t2_instances,
)


@pytest.fixture(scope="session")
def oracle_factory():
    return oracle_backend_factory(feature_dim=512)


@pytest.fixture(scope="session")
def student_factory_t1():
    return student_backend_factory(num_labels=3, feature_dim=512)


def build_t1_spec(n_train=16, n_unlabeled=50, n_aux=16, alpha_aux=None, with_aux=True):
    """Main-task pair inference with a strength-classification auxiliary."""
    reg = registry()
    train_pairs = make_pair_corpus(n_train)
    corpus = make_pair_corpus(n_unlabeled, start=100)
    unlabeled = [replace(inst, label=None) for inst in t1_instances(corpus)]
    kwargs = {}
    if with_aux:
        kwargs = {
            "aux_task": "t2",
            "aux_train": t2_instances(make_strength_records(n_aux)),
            "aux_labels": tuple(STRENGTH_LABELS),
            "alpha_aux": alpha_aux,
        }
    return TaskSpec(
        main_task="t1",
        train=t1_instances(train_pairs),
        unlabeled=unlabeled,
        tuples=list(reg.tuples("t1", "t2")),
        main_labels=tuple(EXAGGERATION_LABELS),
        test=t1_instances(corpus),
        **kwargs,
    )


def fast_pipeline_config(**overrides) -> PipelineConfig:
    """Mock-scale hyperparameters (the defaults are encoder-scale)."""
    defaults = dict(
        train=TrainConfig(
            epochs=2, batch_size=4, learning_rate=0.05, warmup_steps=0, weight_decay=0.0
        ),
        distill=DistillConfig(
            epochs=15,
            batch_size=4,
            learning_rate=0.2,
            warmup_steps=0,
            weight_decay=0.0,
            temperature=2.0,
        ),
    )
    defaults.update(overrides)
    return PipelineConfig(**defaults)
