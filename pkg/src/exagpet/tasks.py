"""Task semantics: claim-strength and exaggeration label spaces, the
six-to-four label mapping, exaggeration derivation, conclusion-sentence
detection, and the two inference routes (direct pair inference vs.
per-side strength comparison)."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Sequence

import numpy as np

from .backend import Backend
from .errors import UsageError
from .pet import PvpModel, TaskInstance, label_score
from .pvp import ROLE_ABSTRACT, ROLE_PRESS


class ClaimStrength(IntEnum):
    NO_RELATIONSHIP = 0
    CORRELATIONAL = 1
    CONDITIONAL_CAUSAL = 2
    DIRECT_CAUSAL = 3


class ExaggerationLabel(IntEnum):
    DOWNPLAYS = 0
    SAME = 1
    EXAGGERATES = 2


STRENGTH_LABELS = tuple(int(v) for v in ClaimStrength)
EXAGGERATION_LABELS = tuple(int(v) for v in ExaggerationLabel)
CONCLUSION_LABELS = (0, 1)

# six-level annotation scheme -> four-level claim strength; level 0
# ("no relationship mentioned") has no counterpart and maps to None
_SUMNER_TO_LI = {0: None, 1: 0, 2: 1, 3: 1, 4: 2, 5: 2, 6: 3}


def map_sumner_to_li(label: int) -> ClaimStrength | None:
    if label not in _SUMNER_TO_LI:
        raise UsageError(f"source strength label must be 0..6, got {label!r}")
    mapped = _SUMNER_TO_LI[label]
    return None if mapped is None else ClaimStrength(mapped)


def derive_exaggeration(press: int, abstract: int) -> ExaggerationLabel:
    """Downplays / same / exaggerates from the sign of press - abstract."""
    if press < abstract:
        return ExaggerationLabel.DOWNPLAYS
    if press > abstract:
        return ExaggerationLabel.EXAGGERATES
    return ExaggerationLabel.SAME


@dataclass
class DocumentPair:
    pair_id: str
    press_sentences: list[str]  # [title, lead, body...]
    abstract_sentences: list[str]
    press_conclusion_index: int | None = None
    abstract_conclusion_index: int | None = None
    press_strength: int | None = None
    abstract_strength: int | None = None
    exaggeration_label: int | None = None

    def __post_init__(self):
        if not self.press_sentences or not self.abstract_sentences:
            raise UsageError(f"pair {self.pair_id!r} has an empty sentence list")
        for idx, sents in (
            (self.press_conclusion_index, self.press_sentences),
            (self.abstract_conclusion_index, self.abstract_sentences),
        ):
            if idx is not None and not (0 <= idx < len(sents)):
                raise UsageError(f"pair {self.pair_id!r}: conclusion index {idx} out of range")


@dataclass(frozen=True)
class SentencePair:
    pair_id: str
    press_sentence: str
    abstract_sentence: str
    press_strength: int | None = None
    abstract_strength: int | None = None
    exaggeration_label: int | None = None

    def __post_init__(self):
        if not self.press_sentence.strip() or not self.abstract_sentence.strip():
            raise UsageError(f"pair {self.pair_id!r} has an empty sentence")


@dataclass(frozen=True)
class StrengthRecord:
    record_id: str
    sentence: str
    source: str  # "press" | "abstract"
    strength: int | None = None


@dataclass(frozen=True)
class ConclusionRecord:
    record_id: str
    sentence: str
    is_conclusion: int


# -- adapters to pattern/classifier inputs -------------------------------------
#
# Pair templates put the abstract (scientists') sentence in slot a and the
# press sentence in slot b; the classifier view is ordered (press, abstract).


def t1_instance(pair: SentencePair) -> TaskInstance:
    return TaskInstance(
        a=pair.abstract_sentence,
        b=pair.press_sentence,
        label=pair.exaggeration_label,
        instance_id=pair.pair_id,
        segments=(pair.press_sentence, pair.abstract_sentence),
    )


def t1_instances(pairs: Sequence[SentencePair]) -> list[TaskInstance]:
    return [t1_instance(p) for p in pairs]


def t2_instance(record: StrengthRecord) -> TaskInstance:
    if record.source not in (ROLE_PRESS, ROLE_ABSTRACT):
        raise UsageError(f"record {record.record_id!r}: bad source {record.source!r}")
    return TaskInstance(
        a=record.sentence,
        role=record.source,
        label=record.strength,
        instance_id=record.record_id,
        segments=(record.sentence, None),
    )


def t2_instances(records: Sequence[StrengthRecord]) -> list[TaskInstance]:
    return [t2_instance(r) for r in records]


def conclusion_instance(record: ConclusionRecord) -> TaskInstance:
    return TaskInstance(
        a=record.sentence,
        label=record.is_conclusion,
        instance_id=record.record_id,
        segments=(record.sentence, None),
    )


def conclusion_instances(records: Sequence[ConclusionRecord]) -> list[TaskInstance]:
    return [conclusion_instance(r) for r in records]


# -- conclusion detection -------------------------------------------------------


def detect_conclusion(
    sentences: Sequence[str], model: PvpModel
) -> tuple[int, str, float]:
    """Pick the sentence with the highest conclusion-label score.

    Ties go to the earliest index. Returns (index, sentence, score).
    """
    if not sentences:
        raise UsageError("sentence list must be non-empty")
    best_index, best_score = 0, None
    for i, sentence in enumerate(sentences):
        score = label_score(model, TaskInstance(a=sentence, instance_id=f"conc:{i}"))[1]
        if best_score is None or score > best_score:
            best_index, best_score = i, score
    return best_index, sentences[best_index], float(best_score)


# -- the two inference routes ---------------------------------------------------

# A strength predictor maps (sentence, role) -> ClaimStrength-valued int.
StrengthPredictor = Callable[[str, str], int]
# A pair predictor maps (press_sentence, abstract_sentence) -> label int.
PairPredictor = Callable[[str, str], int]


def pvp_strength_predictor(model: PvpModel) -> StrengthPredictor:
    def predict(sentence: str, role: str) -> int:
        scores = label_score(model, TaskInstance(a=sentence, role=role))
        best = model.labels[0]
        for l in model.labels[1:]:
            if scores[l] > scores[best]:
                best = l
        return best

    return predict


def classifier_strength_predictor(backend: Backend) -> StrengthPredictor:
    def predict(sentence: str, role: str) -> int:
        return int(np.argmax(backend.classify(sentence)))

    return predict


def pvp_pair_predictor(model: PvpModel) -> PairPredictor:
    def predict(press: str, abstract: str) -> int:
        scores = label_score(model, TaskInstance(a=abstract, b=press))
        best = model.labels[0]
        for l in model.labels[1:]:
            if scores[l] > scores[best]:
                best = l
        return best

    return predict


def classifier_pair_predictor(backend: Backend) -> PairPredictor:
    def predict(press: str, abstract: str) -> int:
        return int(np.argmax(backend.classify(press, abstract)))

    return predict


@dataclass(frozen=True)
class StrengthVerdict:
    label: ExaggerationLabel
    press_strength: int
    abstract_strength: int


def predict_t2(pair: SentencePair, predict_strength: StrengthPredictor) -> StrengthVerdict:
    """Classify each side's claim strength with its proper role, then
    compare the two strengths."""
    press = predict_strength(pair.press_sentence, ROLE_PRESS)
    abstract = predict_strength(pair.abstract_sentence, ROLE_ABSTRACT)
    return StrengthVerdict(
        label=derive_exaggeration(press, abstract),
        press_strength=press,
        abstract_strength=abstract,
    )


def predict_t1(pair: SentencePair, predict_pair: PairPredictor) -> ExaggerationLabel:
    """Single classification of the ordered (press, abstract) pair."""
    return ExaggerationLabel(predict_pair(pair.press_sentence, pair.abstract_sentence))
