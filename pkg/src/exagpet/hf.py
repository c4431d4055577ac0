"""Transformer-encoder backend (optional, requires the ``[hf]`` extra).

Implements the same interface as the mock: single-mask candidate scoring,
one-optimizer-step fine-tuning against per-candidate target distributions,
and a sequence-classification head for the distilled model. The gating
test suite never needs this backend; it exists for encoder-scale runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .backend import (
    CHECKPOINT_FORMAT_VERSION,
    Backend,
    LossSpec,
    MaskedSequence,
    OptimizerConfig,
    SegmentPair,
    TrainExample,
    Vocabulary,
    read_checkpoint_metadata,
)
from .errors import (
    CheckpointError,
    ConfigurationError,
    MalformedSequenceError,
    NumericalFailureError,
    UsageError,
    VocabularyError,
)

logger = logging.getLogger(__name__)


def _require_torch():
    try:
        import torch  # noqa: F401
        import transformers  # noqa: F401
    except ImportError as exc:
        raise ConfigurationError(
            "the real backend needs the optional dependencies: pip install 'exagpet[hf]'"
        ) from exc


class HuggingFaceBackend(Backend):
    """Masked-LM or sequence-classification model behind the Backend interface.

    A backend without ``num_labels`` scores and fine-tunes through the
    masked-LM head; with ``num_labels`` it carries a classification head
    (the distilled student). ``leading_space`` controls whether candidate
    tokens are tokenized with a leading space, which most BPE vocabularies
    need for word-initial pieces.
    """

    def __init__(
        self,
        checkpoint: str = "roberta-base",
        num_labels: int | None = None,
        max_length: int = 256,
        device: str | None = None,
        leading_space: bool = True,
    ):
        _require_torch()
        import torch
        from transformers import (
            AutoModelForMaskedLM,
            AutoModelForSequenceClassification,
            AutoTokenizer,
        )

        self.checkpoint_id = checkpoint
        self.num_labels = num_labels
        self.max_length = max_length
        self.leading_space = leading_space
        self.device = device or ("cuda" if torch.cuda.is_available() else "cpu")
        self.tokenizer = AutoTokenizer.from_pretrained(checkpoint)
        if num_labels is None:
            self.model = AutoModelForMaskedLM.from_pretrained(checkpoint)
        else:
            self.model = AutoModelForSequenceClassification.from_pretrained(
                checkpoint, num_labels=num_labels
            )
        self.model.to(self.device)
        self.model.eval()
        self.training = False
        self._optimizer = None
        self._scheduler = None
        self._optimizer_config = OptimizerConfig()
        tokens = self.tokenizer.convert_ids_to_tokens(list(range(len(self.tokenizer))))
        self.vocabulary = Vocabulary(tuple(tokens), self.tokenizer.mask_token)
        self._warned_multisub: set[str] = set()

    # -- mode & optimizer --------------------------------------------------

    def train(self) -> None:
        self.training = True
        self.model.train()

    def eval(self) -> None:
        self.training = False
        self.model.eval()

    def configure_optimizer(self, config: OptimizerConfig) -> None:
        import torch

        self._optimizer_config = config
        self._optimizer = torch.optim.AdamW(
            self.model.parameters(),
            lr=config.learning_rate,
            betas=(config.beta1, config.beta2),
            eps=config.eps,
            weight_decay=config.weight_decay,
        )
        warmup = max(1, config.warmup_steps)
        self._scheduler = torch.optim.lr_scheduler.LambdaLR(
            self._optimizer,
            lambda step: min(1.0, (step + 1) / warmup) if config.warmup_steps else 1.0,
        )

    @property
    def steps_taken(self) -> int:
        return 0 if self._scheduler is None else self._scheduler.last_epoch

    # -- tokenization helpers ------------------------------------------------

    def _candidate_id(self, token: str) -> int:
        """First sub-token id of a candidate; warns once per multi-piece token."""
        surface = (" " + token) if self.leading_space else token
        pieces = self.tokenizer.tokenize(surface)
        if not pieces:
            raise VocabularyError(f"candidate {token!r} tokenizes to nothing")
        if len(pieces) > 1 and token not in self._warned_multisub:
            logger.warning(
                "candidate %r spans %d sub-tokens; scoring the first only", token, len(pieces)
            )
            self._warned_multisub.add(token)
        return self.tokenizer.convert_tokens_to_ids(pieces[0])

    def _encode(self, sequence: MaskedSequence):
        if sequence.mask_token != self.tokenizer.mask_token:
            raise MalformedSequenceError(
                f"sequence uses {sequence.mask_token!r}, model expects "
                f"{self.tokenizer.mask_token!r}"
            )
        first = sequence.first_segment
        second = sequence.second_segment
        encoded = self.tokenizer(
            first,
            second,
            truncation="only_first" if second is not None else True,
            max_length=self.max_length,
            return_tensors="pt",
        )
        ids = encoded["input_ids"][0]
        mask_positions = (ids == self.tokenizer.mask_token_id).nonzero()
        if len(mask_positions) != 1:
            raise UsageError(
                "input does not contain exactly one mask after tokenization "
                "(was the mask truncated away?)"
            )
        return encoded.to(self.device), int(mask_positions[0][0])

    # -- scoring ----------------------------------------------------------------

    def score_masked(
        self, sequence: MaskedSequence, candidates: Iterable[str]
    ) -> dict[str, float]:
        import torch

        cands = list(candidates)
        if not cands:
            raise UsageError("candidates must be non-empty")
        encoded, position = self._encode(sequence)
        with torch.no_grad():
            logits = self.model(**encoded).logits[0, position]
        return {tok: float(logits[self._candidate_id(tok)]) for tok in cands}

    def classify(self, first: str, second: str | None = None) -> np.ndarray:
        import torch

        if self.num_labels is None:
            raise ConfigurationError("no classification head attached")
        pair = SegmentPair(first, second)
        encoded = self.tokenizer(
            pair.first,
            pair.second,
            truncation=True,
            max_length=self.max_length,
            return_tensors="pt",
        ).to(self.device)
        with torch.no_grad():
            logits = self.model(**encoded).logits[0]
        return logits.cpu().numpy()

    # -- training -----------------------------------------------------------------

    def _item_scores(self, item: TrainExample, aggregation: str):
        import torch

        keys = list(item.target.keys())
        if isinstance(item.inputs, MaskedSequence):
            encoded, position = self._encode(item.inputs)
            logits = self.model(**encoded).logits[0, position]
            scores = []
            for key in keys:
                tokens = (key,) if isinstance(key, str) else tuple(key)
                ids = torch.tensor(
                    [self._candidate_id(t) for t in tokens], device=self.device
                )
                picked = logits[ids]
                if aggregation == "mean":
                    scores.append(picked.mean())
                elif aggregation == "max":
                    scores.append(picked.max())
                else:
                    scores.append(torch.logsumexp(picked, dim=0))
            return torch.stack(scores)
        if self.num_labels is None:
            raise ConfigurationError("no classification head attached")
        for key in keys:
            if not isinstance(key, int) or not (0 <= key < self.num_labels):
                raise UsageError(f"head target key {key!r} outside label range")
        encoded = self.tokenizer(
            item.inputs.first,
            item.inputs.second,
            truncation=True,
            max_length=self.max_length,
            return_tensors="pt",
        ).to(self.device)
        logits = self.model(**encoded).logits[0]
        return logits[torch.tensor(keys, device=self.device)]

    def fine_tune_batch(self, batch: Sequence[TrainExample], loss_spec: LossSpec) -> float:
        import torch

        if not self.training:
            raise UsageError("fine_tune_batch requires training mode")
        if not batch:
            raise UsageError("batch must be non-empty")
        if self._optimizer is None:
            self.configure_optimizer(self._optimizer_config)
        total = None
        for item in batch:
            probs = np.array([float(p) for p in item.target.values()])
            if abs(probs.sum() - 1.0) > 1e-6:
                raise UsageError(
                    f"target distribution sums to {probs.sum():.8f}, expected 1"
                )
            scores = self._item_scores(item, loss_spec.aggregation)
            target = torch.tensor(probs, device=self.device, dtype=scores.dtype)
            log_q = torch.log_softmax(scores / loss_spec.temperature, dim=0)
            if loss_spec.kind == "cross_entropy":
                item_loss = -(target * log_q).sum()
            else:
                nz = target > 0
                item_loss = (target[nz] * (target[nz].log() - log_q[nz])).sum()
            if not math.isfinite(float(item_loss)):
                raise NumericalFailureError(
                    f"non-finite loss for instance {item.instance_id!r}",
                    instance_id=item.instance_id,
                )
            weighted = item.weight * item_loss
            total = weighted if total is None else total + weighted
        loss = total / len(batch)
        self._optimizer.zero_grad()
        loss.backward()
        self._optimizer.step()
        self._scheduler.step()
        return float(loss)

    # -- persistence -----------------------------------------------------------------

    def save_checkpoint(self, path: str | Path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        meta = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "kind": "hf",
            "checkpoint_id": self.checkpoint_id,
            "vocab_hash": self._vocab_hash(),
            "head_labels": self.num_labels,
            "max_length": self.max_length,
            "leading_space": self.leading_space,
        }
        (path / "metadata.json").write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        self.model.save_pretrained(path / "model")
        self.tokenizer.save_pretrained(path / "model")

    def _vocab_hash(self) -> str:
        h = hashlib.sha256()
        for token, index in sorted(self.tokenizer.get_vocab().items()):
            h.update(f"{token}\x00{index}\n".encode("utf-8"))
        return h.hexdigest()

    @classmethod
    def load_checkpoint(
        cls, path: str | Path, expect_labels: int | None = None
    ) -> "HuggingFaceBackend":
        path = Path(path)
        meta = read_checkpoint_metadata(path)
        if meta.get("kind") != "hf":
            raise CheckpointError(f"not a transformer checkpoint: kind={meta.get('kind')!r}")
        if expect_labels is not None and meta["head_labels"] != expect_labels:
            raise ConfigurationError(
                f"checkpoint head has {meta['head_labels']} labels, expected {expect_labels}"
            )
        backend = cls(
            checkpoint=str(path / "model"),
            num_labels=meta["head_labels"],
            max_length=meta["max_length"],
            leading_space=meta.get("leading_space", True),
        )
        backend.checkpoint_id = meta["checkpoint_id"]
        return backend
