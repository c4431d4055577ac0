"""Masked-language-model backends.

A backend scores candidate tokens at the single masked position of a
sequence, fine-tunes against per-candidate target distributions, and can
carry a sequence-classification head for the distilled final model.

Two implementations exist: the deterministic, table-driven
:class:`MockBackend` defined here (pure numpy, used by the whole test
suite), and the optional transformer-based backend in
:mod:`exagpet.hf`. Both share the :class:`Backend` interface and the
checkpoint directory layout, so pipelines are backend-agnostic.

Concurrency: a model is single-writer while training (never call
fine_tune_batch concurrently on one model); inference-mode scoring is
read-only and safe from many threads; distinct models may train in
parallel.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import zlib
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    CheckpointError,
    ConfigurationError,
    MalformedSequenceError,
    NumericalFailureError,
    UsageError,
    VocabularyError,
)

DEFAULT_MASK = "[MASK]"

CHECKPOINT_FORMAT_VERSION = 1
_METADATA_FILE = "metadata.json"


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token inventory with a designated mask token.

    Token ids are dense 0..len(tokens)-1 in declaration order.
    """

    tokens: tuple[str, ...]
    mask_token: str = DEFAULT_MASK

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if len(set(self.tokens)) != len(self.tokens):
            raise UsageError("vocabulary tokens must be unique")
        if self.mask_token not in self.tokens:
            raise UsageError(f"mask token {self.mask_token!r} must be in the vocabulary")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def token_id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise VocabularyError(f"token {token!r} is not in the vocabulary") from None

    def digest(self) -> str:
        h = hashlib.sha256()
        for t in self.tokens:
            h.update(t.encode("utf-8"))
            h.update(b"\x00")
        h.update(self.mask_token.encode("utf-8"))
        return h.hexdigest()


@dataclass(frozen=True)
class MaskedSequence:
    """A text containing exactly one mask sentinel.

    ``segment_boundary`` is a character offset splitting the text into a
    first and second segment (two-segment encoder inputs); ``None`` means
    a single segment.
    """

    text: str
    segment_boundary: int | None = None
    mask_token: str = DEFAULT_MASK

    def __post_init__(self):
        n = self.text.count(self.mask_token)
        if n != 1:
            raise MalformedSequenceError(
                f"expected exactly one {self.mask_token!r} sentinel, found {n}"
            )
        if not self.text.replace(self.mask_token, "").strip():
            raise MalformedSequenceError("sequence is empty outside the mask sentinel")
        if self.segment_boundary is not None and not (
            0 < self.segment_boundary <= len(self.text)
        ):
            raise MalformedSequenceError(
                f"segment boundary {self.segment_boundary} outside [1, {len(self.text)}]"
            )

    @property
    def first_segment(self) -> str:
        if self.segment_boundary is None:
            return self.text
        return self.text[: self.segment_boundary]

    @property
    def second_segment(self) -> str | None:
        if self.segment_boundary is None:
            return None
        return self.text[self.segment_boundary :]


@dataclass(frozen=True)
class SegmentPair:
    """Input to the sequence-classification head: one or two text segments."""

    first: str
    second: str | None = None

    def __post_init__(self):
        if not self.first or not self.first.strip():
            raise UsageError("first segment must be non-empty")


# A training target maps candidate keys to probabilities. Keys are token
# strings, tuples of token strings (a group scored under the configured
# aggregation, e.g. all verbalizations of one label), or integer label ids
# when training the classification head.
TargetKey = str | tuple[str, ...] | int


@dataclass(frozen=True)
class TrainExample:
    inputs: MaskedSequence | SegmentPair
    target: Mapping[TargetKey, float]
    weight: float = 1.0
    instance_id: str = ""


@dataclass(frozen=True)
class LossSpec:
    """Which loss ``fine_tune_batch`` computes.

    kind: "cross_entropy" or "kl". The temperature divides the scores on
    both sides before the softmax (targets for KL distillation are
    expected to be pre-softened by the caller). ``aggregation`` controls
    how tuple-valued candidate groups combine their member token scores.
    """

    kind: str = "cross_entropy"
    temperature: float = 1.0
    aggregation: str = "mean"

    def __post_init__(self):
        if self.kind not in ("cross_entropy", "kl"):
            raise UsageError(f"unknown loss kind {self.kind!r}")
        if self.temperature <= 0:
            raise UsageError("temperature must be positive")
        if self.aggregation not in ("mean", "max", "logsumexp"):
            raise UsageError(f"unknown aggregation {self.aggregation!r}")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    warmup_steps: int = 0
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class AdamW:
    """Decoupled-weight-decay Adam with linear warmup, on numpy arrays."""

    def __init__(self, params: dict[str, np.ndarray], config: OptimizerConfig):
        self.params = params
        self.config = config
        self.step_count = 0
        self._m = {k: np.zeros_like(v) for k, v in params.items()}
        self._v = {k: np.zeros_like(v) for k, v in params.items()}

    def current_lr(self) -> float:
        cfg = self.config
        if cfg.warmup_steps > 0:
            scale = min(1.0, self.step_count / cfg.warmup_steps)
        else:
            scale = 1.0
        return cfg.learning_rate * scale

    def step(self, grads: dict[str, np.ndarray]) -> None:
        cfg = self.config
        self.step_count += 1
        lr = self.current_lr()
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * g * g
            m_hat = m / (1 - cfg.beta1**self.step_count)
            v_hat = v / (1 - cfg.beta2**self.step_count)
            p -= lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p)


class Backend(ABC):
    """Interface every backend implements."""

    vocabulary: Vocabulary
    num_labels: int | None

    @abstractmethod
    def score_masked(self, sequence: MaskedSequence, candidates: Iterable[str]) -> dict[str, float]:
        """Raw (unnormalized) score per candidate token at the masked position."""

    @abstractmethod
    def fine_tune_batch(self, batch: Sequence[TrainExample], loss_spec: LossSpec) -> float:
        """Apply exactly one optimizer step; return the batch loss before the update."""

    @abstractmethod
    def classify(self, first: str, second: str | None = None) -> np.ndarray:
        """Label logits from the sequence-classification head."""

    @abstractmethod
    def save_checkpoint(self, path: str | Path) -> None: ...

    @abstractmethod
    def train(self) -> None: ...

    @abstractmethod
    def eval(self) -> None: ...

    def classify_batch(self, inputs: Sequence[SegmentPair]) -> list[np.ndarray]:
        return [self.classify(p.first, p.second) for p in inputs]


def _hashed_features(text: str, dim: int) -> np.ndarray:
    """Hashed bag-of-words counts over lowercased word tokens."""
    vec = np.zeros(dim)
    for tok in re.findall(r"\w+", text.lower()):
        vec[zlib.crc32(tok.encode("utf-8")) % dim] += 1.0
    return vec


@dataclass(frozen=True)
class TableEntry:
    """One row of a score table: fires when every ``&&``-separated part of
    ``pattern`` occurs as a substring of the scored text."""

    pattern: str
    key: str | int
    score: float

    def matches(self, text: str) -> bool:
        return all(part in text for part in self.pattern.split("&&"))


class _ScoreTable:
    def __init__(self, entries: Iterable[TableEntry] = ()):
        self.entries = list(entries)

    def score(self, text: str, key: str | int) -> float:
        return sum(e.score for e in self.entries if e.key == key and e.matches(text))


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - np.max(scores)
    exp = np.exp(shifted)
    return exp / exp.sum()


class MockBackend(Backend):
    """Deterministic table-driven backend.

    Scoring combines three parts:

    * a static substring-match table (the oracle knob for tests),
    * a trainable per-token bias,
    * optionally, trainable linear weights over hashed bag-of-words
      features of the input text (``feature_dim > 0``).

    The classification head mirrors the same structure over label ids.
    All randomness-free: scoring is a pure function of the parameters.
    """

    def __init__(
        self,
        vocabulary: Vocabulary,
        table: Iterable[TableEntry] = (),
        head_table: Iterable[TableEntry] = (),
        feature_dim: int = 0,
        num_labels: int | None = None,
        max_length: int = 256,
        checkpoint_id: str = "mock",
    ):
        if feature_dim < 0:
            raise UsageError("feature_dim must be >= 0")
        self.vocabulary = vocabulary
        self.table = _ScoreTable(table)
        self.head_table = _ScoreTable(head_table)
        self.feature_dim = feature_dim
        self.num_labels = num_labels
        self.max_length = max_length
        self.checkpoint_id = checkpoint_id
        self.training = False
        self._optimizer: AdamW | None = None
        self._optimizer_config = OptimizerConfig()
        self._params: dict[str, np.ndarray] = {"bias": np.zeros(len(vocabulary))}
        if feature_dim:
            self._params["token_weights"] = np.zeros((feature_dim, len(vocabulary)))
        if num_labels is not None:
            if num_labels < 2:
                raise ConfigurationError("classification head needs at least 2 labels")
            self._params["head_bias"] = np.zeros(num_labels)
            if feature_dim:
                self._params["head_weights"] = np.zeros((feature_dim, num_labels))

    # -- mode & optimizer -------------------------------------------------

    def train(self) -> None:
        self.training = True

    def eval(self) -> None:
        self.training = False

    def configure_optimizer(self, config: OptimizerConfig) -> None:
        self._optimizer_config = config
        self._optimizer = AdamW(self._params, config)

    @property
    def steps_taken(self) -> int:
        return 0 if self._optimizer is None else self._optimizer.step_count

    @property
    def parameters(self) -> dict[str, np.ndarray]:
        return self._params

    # -- scoring -----------------------------------------------------------

    def _validate_sequence(self, sequence: MaskedSequence) -> None:
        mask = self.vocabulary.mask_token
        if sequence.mask_token != mask or sequence.text.count(mask) != 1:
            raise MalformedSequenceError(
                f"sequence must contain exactly one {mask!r} sentinel"
            )

    def _truncate(self, sequence: MaskedSequence) -> MaskedSequence:
        """Enforce max_length by dropping tokens from the end of the first
        segment, never the mask itself."""
        mask = self.vocabulary.mask_token
        first = sequence.first_segment
        second = sequence.second_segment or ""
        total = len(first.split()) + len(second.split())
        if total <= self.max_length:
            return sequence
        first_tokens = first.split()
        overflow = total - self.max_length
        kept: list[str] = []
        for tok in reversed(first_tokens):
            if overflow > 0 and mask not in tok:
                overflow -= 1
            else:
                kept.append(tok)
        if overflow > 0:
            raise UsageError(
                f"input of {total} tokens cannot be truncated to {self.max_length} "
                "without removing the mask token"
            )
        new_first = " ".join(reversed(kept))
        try:
            if sequence.segment_boundary is None:
                return MaskedSequence(new_first, None, mask)
            if not new_first:
                return MaskedSequence(second, None, mask)
            return MaskedSequence(new_first + second, len(new_first), mask)
        except MalformedSequenceError as exc:
            raise UsageError(
                f"truncation to {self.max_length} tokens leaves no usable context: {exc}"
            ) from exc

    def _token_scores(self, text: str, tokens: Sequence[str]) -> np.ndarray:
        bias = self._params["bias"]
        feats = _hashed_features(text, self.feature_dim) if self.feature_dim else None
        out = np.empty(len(tokens))
        for j, tok in enumerate(tokens):
            tid = self.vocabulary.token_id(tok)
            s = self.table.score(text, tok) + bias[tid]
            if feats is not None:
                s += feats @ self._params["token_weights"][:, tid]
            out[j] = s
        return out

    def score_masked(
        self, sequence: MaskedSequence, candidates: Iterable[str]
    ) -> dict[str, float]:
        self._validate_sequence(sequence)
        seq = self._truncate(sequence)
        cands = list(candidates)
        if not cands:
            raise UsageError("candidates must be non-empty")
        scores = self._token_scores(seq.text, cands)
        return {tok: float(s) for tok, s in zip(cands, scores)}

    def classify(self, first: str, second: str | None = None) -> np.ndarray:
        if self.num_labels is None:
            raise ConfigurationError("no classification head attached")
        pair = SegmentPair(first, second)
        text = pair.first if pair.second is None else pair.first + "\n" + pair.second
        logits = np.array(
            [self.head_table.score(text, l) for l in range(self.num_labels)], dtype=float
        )
        logits += self._params["head_bias"]
        if self.feature_dim:
            feats = _hashed_features(text, self.feature_dim)
            logits += feats @ self._params["head_weights"]
        return logits

    # -- training ----------------------------------------------------------

    def _group_tokens(self, key: TargetKey) -> tuple[str, ...]:
        return (key,) if isinstance(key, str) else tuple(key)

    def _forward_item(self, item: TrainExample, aggregation: str):
        """Candidate scores plus everything needed for the backward pass."""
        if isinstance(item.inputs, MaskedSequence):
            self._validate_sequence(item.inputs)
            seq = self._truncate(item.inputs)
            text = seq.text
            keys = list(item.target.keys())
            groups = [self._group_tokens(k) for k in keys]
            token_ids = [
                tuple(self.vocabulary.token_id(t) for t in g) for g in groups
            ]
            per_token = [self._token_scores(text, g) for g in groups]
            scores = np.empty(len(keys))
            agg_weights: list[np.ndarray] = []
            for j, ts in enumerate(per_token):
                if aggregation == "mean":
                    scores[j] = ts.mean()
                    agg_weights.append(np.full(len(ts), 1.0 / len(ts)))
                elif aggregation == "max":
                    best = int(np.argmax(ts))
                    scores[j] = ts[best]
                    w = np.zeros(len(ts))
                    w[best] = 1.0
                    agg_weights.append(w)
                else:  # logsumexp
                    m = ts.max()
                    e = np.exp(ts - m)
                    scores[j] = m + math.log(e.sum())
                    agg_weights.append(e / e.sum())
            feats = (
                _hashed_features(text, self.feature_dim) if self.feature_dim else None
            )
            return scores, {"kind": "mlm", "ids": token_ids, "agg": agg_weights, "feats": feats}
        # classification-head route
        if self.num_labels is None:
            raise ConfigurationError("no classification head attached")
        keys = list(item.target.keys())
        for k in keys:
            if not isinstance(k, int) or not (0 <= k < self.num_labels):
                raise UsageError(f"head target key {k!r} outside label range")
        logits = self.classify(item.inputs.first, item.inputs.second)
        text = (
            item.inputs.first
            if item.inputs.second is None
            else item.inputs.first + "\n" + item.inputs.second
        )
        feats = _hashed_features(text, self.feature_dim) if self.feature_dim else None
        return logits[np.array(keys)], {"kind": "head", "ids": keys, "feats": feats}

    def _batch_loss(self, batch: Sequence[TrainExample], loss_spec: LossSpec):
        if not batch:
            raise UsageError("batch must be non-empty")
        n = len(batch)
        total = 0.0
        grads = {k: np.zeros_like(v) for k, v in self._params.items()}
        for item in batch:
            probs = np.array([float(p) for p in item.target.values()])
            if abs(probs.sum() - 1.0) > 1e-6:
                raise UsageError(
                    f"target distribution sums to {probs.sum():.8f}, expected 1"
                )
            scores, ctx = self._forward_item(item, loss_spec.aggregation)
            if not np.all(np.isfinite(scores)):
                raise NumericalFailureError(
                    f"non-finite scores for instance {item.instance_id!r}",
                    instance_id=item.instance_id,
                )
            q = softmax(scores / loss_spec.temperature)
            if loss_spec.kind == "cross_entropy":
                item_loss = -float(np.sum(probs * np.log(np.maximum(q, 1e-300))))
            else:
                nz = probs > 0
                item_loss = float(
                    np.sum(probs[nz] * (np.log(probs[nz]) - np.log(np.maximum(q[nz], 1e-300))))
                )
            if not math.isfinite(item_loss):
                raise NumericalFailureError(
                    f"non-finite loss for instance {item.instance_id!r}",
                    instance_id=item.instance_id,
                )
            total += item.weight * item_loss
            # d(loss_i)/d(score_j) is (q - p)/T for both loss kinds
            dscore = item.weight / n * (q - probs) / loss_spec.temperature
            if ctx["kind"] == "mlm":
                feats = ctx["feats"]
                for j, (ids, agg) in enumerate(zip(ctx["ids"], ctx["agg"])):
                    for tid, w in zip(ids, agg):
                        g = dscore[j] * w
                        grads["bias"][tid] += g
                        if feats is not None:
                            grads["token_weights"][:, tid] += g * feats
            else:
                feats = ctx["feats"]
                for j, lid in enumerate(ctx["ids"]):
                    grads["head_bias"][lid] += dscore[j]
                    if feats is not None:
                        grads["head_weights"][:, lid] += dscore[j] * feats
        return total / n, grads

    def evaluate_loss(self, batch: Sequence[TrainExample], loss_spec: LossSpec) -> float:
        """Batch loss at the current parameters, with no update."""
        loss, _ = self._batch_loss(batch, loss_spec)
        return loss

    def loss_and_gradients(self, batch, loss_spec):
        return self._batch_loss(batch, loss_spec)

    def fine_tune_batch(self, batch: Sequence[TrainExample], loss_spec: LossSpec) -> float:
        if not self.training:
            raise UsageError("fine_tune_batch requires training mode")
        loss, grads = self._batch_loss(batch, loss_spec)
        if self._optimizer is None:
            self.configure_optimizer(self._optimizer_config)
        self._optimizer.step(grads)
        return loss

    # -- persistence ---------------------------------------------------------

    def save_checkpoint(self, path: str | Path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        meta = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "kind": "mock",
            "checkpoint_id": self.checkpoint_id,
            "vocab_hash": self.vocabulary.digest(),
            "head_labels": self.num_labels,
            "feature_dim": self.feature_dim,
            "max_length": self.max_length,
        }
        (path / _METADATA_FILE).write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        config = {
            "vocabulary": list(self.vocabulary.tokens),
            "mask_token": self.vocabulary.mask_token,
            "entries": [
                {"pattern": e.pattern, "token": e.key, "score": e.score}
                for e in self.table.entries
            ],
            "head_entries": [
                {"pattern": e.pattern, "label": e.key, "score": e.score}
                for e in self.head_table.entries
            ],
        }
        (path / "config.json").write_text(
            json.dumps(config, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        np.savez(path / "weights.npz", **self._params)

    @classmethod
    def load_checkpoint(cls, path: str | Path, expect_labels: int | None = None) -> "MockBackend":
        path = Path(path)
        meta = read_checkpoint_metadata(path)
        if meta.get("kind") != "mock":
            raise CheckpointError(f"not a mock checkpoint: kind={meta.get('kind')!r}")
        config = json.loads((path / "config.json").read_text(encoding="utf-8"))
        vocab = Vocabulary(tuple(config["vocabulary"]), config["mask_token"])
        if vocab.digest() != meta["vocab_hash"]:
            raise CheckpointError("vocabulary hash mismatch (corrupt checkpoint)")
        if expect_labels is not None and meta["head_labels"] != expect_labels:
            raise ConfigurationError(
                f"checkpoint head has {meta['head_labels']} labels, expected {expect_labels}"
            )
        backend = cls(
            vocab,
            table=[TableEntry(e["pattern"], e["token"], e["score"]) for e in config["entries"]],
            head_table=[
                TableEntry(e["pattern"], e["label"], e["score"])
                for e in config["head_entries"]
            ],
            feature_dim=meta["feature_dim"],
            num_labels=meta["head_labels"],
            max_length=meta["max_length"],
            checkpoint_id=meta["checkpoint_id"],
        )
        with np.load(path / "weights.npz") as weights:
            for name in backend._params:
                backend._params[name][...] = weights[name]
        return backend

    # -- construction from the JSON mock-table format -------------------------

    @classmethod
    def from_config(cls, config: Mapping) -> "MockBackend":
        vocab = Vocabulary(
            tuple(config["vocabulary"]), config.get("mask_token", DEFAULT_MASK)
        )
        return cls(
            vocab,
            table=[
                TableEntry(e["pattern"], e["token"], float(e["score"]))
                for e in config.get("entries", [])
            ],
            head_table=[
                TableEntry(e["pattern"], int(e["label"]), float(e["score"]))
                for e in config.get("head_entries", [])
            ],
            feature_dim=int(config.get("feature_dim", 0)),
            num_labels=config.get("num_labels"),
            max_length=int(config.get("max_length", 256)),
            checkpoint_id=config.get("checkpoint_id", "mock"),
        )

    @classmethod
    def from_json_file(cls, path: str | Path) -> "MockBackend":
        return cls.from_config(json.loads(Path(path).read_text(encoding="utf-8")))


def read_checkpoint_metadata(path: str | Path) -> dict:
    path = Path(path)
    meta_path = path / _METADATA_FILE
    if not meta_path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint metadata at {meta_path}: {exc}") from exc
    version = meta.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {version!r} "
            f"(supported: {CHECKPOINT_FORMAT_VERSION})"
        )
    return meta


def load_checkpoint(path: str | Path, expect_labels: int | None = None) -> Backend:
    """Load any backend checkpoint, dispatching on its recorded kind."""
    meta = read_checkpoint_metadata(path)
    kind = meta.get("kind")
    if kind == "mock":
        return MockBackend.load_checkpoint(path, expect_labels=expect_labels)
    if kind == "hf":
        from .hf import HuggingFaceBackend

        return HuggingFaceBackend.load_checkpoint(path, expect_labels=expect_labels)
    raise CheckpointError(f"unknown backend kind {kind!r}")
