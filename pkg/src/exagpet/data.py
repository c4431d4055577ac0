"""Corpus construction: annotation-export ingestion, gold-sentence
alignment via ROUGE, press-release truncation, stratified sampling, and a
pluggable abstract-fetch client.

All emitted files are JSON-lines, UTF-8, LF line endings, with sorted
keys, so rebuilding from identical inputs is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import DataError, RateLimitError, UsageError
from .tasks import (
    ConclusionRecord,
    SentencePair,
    StrengthRecord,
    derive_exaggeration,
    map_sumner_to_li,
)

logger = logging.getLogger(__name__)

FETCH_BASE_URL_ENV = "EXAG_FETCH_BASE_URL"
FETCH_API_KEY_ENV = "EXAG_FETCH_API_KEY"
DEFAULT_FETCH_BASE_URL = "https://api.semanticscholar.org/graph/v1"

ALIGNMENT_REVIEW_THRESHOLD = 0.3

_DOI_PATTERN = re.compile(r"^10\.\d{4,9}/\S+$")
_WORD = re.compile(r"[a-z0-9]+")


# -- ROUGE ---------------------------------------------------------------------


class RougeScores(NamedTuple):
    recall: float
    precision: float
    f1: float


def _tokenize(sentence: str) -> list[str]:
    return _WORD.findall(sentence.lower())


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_score(candidate: str, reference: str, variant: str = "rougeL") -> RougeScores:
    """ROUGE recall/precision/F1 over lowercased word tokens.

    variant: "rougeL" (longest common subsequence, the default), "rouge1",
    or "rouge2".
    """
    cand = _tokenize(candidate)
    ref = _tokenize(reference)
    if not cand or not ref:
        raise UsageError("both sentences must be non-empty after tokenization")
    if variant == "rougeL":
        match = _lcs_length(cand, ref)
        denom_c, denom_r = len(cand), len(ref)
    elif variant in ("rouge1", "rouge2"):
        n = 1 if variant == "rouge1" else 2
        cgrams, rgrams = _ngrams(cand, n), _ngrams(ref, n)
        match = sum(min(c, rgrams[g]) for g, c in cgrams.items())
        denom_c, denom_r = max(sum(cgrams.values()), 1), max(sum(rgrams.values()), 1)
    else:
        raise UsageError(f"unknown ROUGE variant {variant!r}")
    precision = match / denom_c
    recall = match / denom_r
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return RougeScores(recall=recall, precision=precision, f1=f1)


class MatchResult(NamedTuple):
    index: int
    f1: float
    low_confidence: bool


def match_sentence(
    paraphrase: str,
    sentences: Sequence[str],
    variant: str = "rougeL",
    threshold: float = ALIGNMENT_REVIEW_THRESHOLD,
) -> MatchResult:
    """Best-matching sentence by ROUGE F1; ties go to the earliest index."""
    if not sentences:
        raise UsageError("sentence list must be non-empty")
    best_index, best_f1 = 0, -1.0
    for i, sentence in enumerate(sentences):
        f1 = rouge_score(sentence, paraphrase, variant).f1
        if f1 > best_f1:
            best_index, best_f1 = i, f1
    low = best_f1 < threshold
    if low:
        logger.warning(
            "low-confidence alignment (F1 %.3f < %.2f) for %r", best_f1, threshold, paraphrase
        )
    return MatchResult(best_index, best_f1, low)


# -- press truncation and sentence splitting -------------------------------------


def split_sentences(text: str) -> list[str]:
    """Naive terminator-based sentence splitter (pluggable; alignment is
    the contract, not tokenizer identity)."""
    parts = re.split(r"(?<=[.!?])\s+", text.strip())
    return [p for p in parts if p]


def truncate_press(
    title: str | None, lead: str | None, body: Sequence[str]
) -> list[str]:
    """Keep the title, the lead sentence, and the first three body sentences."""
    if not title or not title.strip():
        raise DataError("press release is missing its title")
    kept = [title]
    if lead and lead.strip():
        kept.append(lead)
    else:
        logger.warning("press release %r has no lead sentence", title[:40])
    kept.extend(body[:3])
    return kept


# -- stratified sampling ----------------------------------------------------------


def stratified_sample(
    records: Sequence,
    n: int,
    seed: int,
    label_of: Callable[[object], int] = lambda r: r.label,
) -> list:
    """Deterministic stratified sample of size n.

    Per-label quotas are proportional to the full label distribution with
    largest-remainder rounding; selection within a label is a seeded
    shuffle. Output preserves the original record order.
    """
    if n > len(records):
        raise UsageError(f"cannot sample {n} of {len(records)} records")
    if n < 0:
        raise UsageError("sample size must be >= 0")
    labels = [label_of(r) for r in records]
    by_label: dict[int, list[int]] = {}
    for i, l in enumerate(labels):
        by_label.setdefault(l, []).append(i)
    ordered = sorted(by_label)
    total = len(records)
    quotas = {l: n * len(by_label[l]) / total for l in ordered}
    counts = {l: int(quotas[l]) for l in ordered}
    short = n - sum(counts.values())
    remainders = sorted(
        ordered, key=lambda l: (-(quotas[l] - counts[l]), ordered.index(l))
    )
    for l in remainders[:short]:
        counts[l] += 1
    rng = np.random.default_rng([seed, 6])
    chosen: set[int] = set()
    for l in ordered:
        pool = by_label[l]
        order = rng.permutation(len(pool))
        chosen.update(pool[i] for i in order[: counts[l]])
    return [records[i] for i in sorted(chosen)]


# -- abstract fetching -------------------------------------------------------------


class TransportResponse(NamedTuple):
    status: int
    body: str


class UrllibTransport:
    """Default HTTP transport; any object with the same ``get`` works."""

    def __init__(self, timeout: float = 30.0):
        self.timeout = timeout

    def get(self, url: str, headers: Mapping[str, str] | None = None) -> TransportResponse:
        request = urllib.request.Request(url, headers=dict(headers or {}))
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                return TransportResponse(resp.status, resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            return TransportResponse(exc.code, exc.read().decode("utf-8", "replace"))


def fetch_abstract(
    doi: str,
    transport=None,
    base_url: str | None = None,
    api_key: str | None = None,
    sleep: Callable[[float], None] = time.sleep,
    max_tries: int = 5,
) -> str | None:
    """GET {base}/paper/{doi}?fields=abstract and return the abstract text.

    Returns None when the paper is unknown (404) or has a null abstract.
    Retries 429 responses with exponential backoff (1s base) up to
    ``max_tries`` attempts, then raises RateLimitError.
    """
    if not _DOI_PATTERN.match(doi or ""):
        raise UsageError(f"syntactically invalid DOI {doi!r}")
    transport = transport or UrllibTransport()
    base_url = (base_url or os.environ.get(FETCH_BASE_URL_ENV) or DEFAULT_FETCH_BASE_URL).rstrip("/")
    api_key = api_key if api_key is not None else os.environ.get(FETCH_API_KEY_ENV)
    headers = {"x-api-key": api_key} if api_key else {}
    url = f"{base_url}/paper/{doi}?fields=abstract"
    for attempt in range(max_tries):
        response = transport.get(url, headers=headers)
        if response.status == 429:
            if attempt < max_tries - 1:
                sleep(float(2**attempt))
            continue
        if response.status == 404:
            return None
        if response.status != 200:
            raise DataError(f"fetch for {doi} failed with HTTP {response.status}")
        try:
            payload = json.loads(response.body)
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed fetch response for {doi}: {exc}") from exc
        abstract = payload.get("abstract")
        if abstract is not None and not isinstance(abstract, str):
            raise DataError(f"malformed abstract field for {doi}")
        return abstract
    raise RateLimitError(f"rate-limited on {doi} after {max_tries} tries")


def fetch_abstracts(
    dois: Sequence[str], transport=None, jobs: int = 1, **kwargs
) -> dict[str, str | None]:
    """Fetch several abstracts, optionally with a bounded worker pool."""
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(
                pool.map(lambda d: fetch_abstract(d, transport=transport, **kwargs), dois)
            )
        return dict(zip(dois, results))
    return {d: fetch_abstract(d, transport=transport, **kwargs) for d in dois}


# -- JSONL plumbing -----------------------------------------------------------------


def read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{i + 1}: invalid JSON: {exc}") from exc
    return rows


def write_jsonl(path: str | Path, rows: Iterable[Mapping]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def load_sentence_pairs(path: str | Path) -> list[SentencePair]:
    return [
        SentencePair(
            pair_id=row["id"],
            press_sentence=row["press_sentence"],
            abstract_sentence=row["abstract_sentence"],
            press_strength=row.get("press_strength"),
            abstract_strength=row.get("abstract_strength"),
            exaggeration_label=row.get("exaggeration_label"),
        )
        for row in read_jsonl(path)
    ]


def sentence_pair_to_dict(pair: SentencePair) -> dict:
    return {
        "id": pair.pair_id,
        "press_sentence": pair.press_sentence,
        "abstract_sentence": pair.abstract_sentence,
        "press_strength": pair.press_strength,
        "abstract_strength": pair.abstract_strength,
        "exaggeration_label": pair.exaggeration_label,
    }


def save_sentence_pairs(pairs: Iterable[SentencePair], path: str | Path) -> None:
    write_jsonl(path, (sentence_pair_to_dict(p) for p in pairs))


def load_strength_records(path: str | Path) -> list[StrengthRecord]:
    return [
        StrengthRecord(
            record_id=row["id"],
            sentence=row["sentence"],
            source=row["source"],
            strength=row.get("strength"),
        )
        for row in read_jsonl(path)
    ]


def save_strength_records(records: Iterable[StrengthRecord], path: str | Path) -> None:
    write_jsonl(
        path,
        (
            {
                "id": r.record_id,
                "sentence": r.sentence,
                "source": r.source,
                "strength": r.strength,
            }
            for r in records
        ),
    )


def load_conclusion_records(path: str | Path) -> list[ConclusionRecord]:
    return [
        ConclusionRecord(
            record_id=row["id"], sentence=row["sentence"], is_conclusion=int(row["is_conclusion"])
        )
        for row in read_jsonl(path)
    ]


def save_conclusion_records(records: Iterable[ConclusionRecord], path: str | Path) -> None:
    write_jsonl(
        path,
        (
            {"id": r.record_id, "sentence": r.sentence, "is_conclusion": r.is_conclusion}
            for r in records
        ),
    )


# -- unlabeled pairs -----------------------------------------------------------------


@dataclass(frozen=True)
class UnlabeledPair:
    pair_id: str
    doi: str
    press_title: str
    press_lead: str | None
    press_body: tuple[str, ...]
    abstract_sentences: tuple[str, ...]

    def __post_init__(self):
        if not self.doi:
            raise DataError(f"pair {self.pair_id!r} has an empty DOI")
        if not self.abstract_sentences:
            raise DataError(f"pair {self.pair_id!r} has no abstract sentences")

    def press_sentences(self) -> list[str]:
        return truncate_press(self.press_title, self.press_lead, self.press_body)


def load_unlabeled_pairs(path: str | Path) -> tuple[list[UnlabeledPair], list[dict]]:
    """Read raw unlabeled pairs; returns (pairs, skipped rows with reasons)."""
    pairs: list[UnlabeledPair] = []
    skipped: list[dict] = []
    for row in read_jsonl(path):
        pair_id = row.get("id", "?")
        try:
            abstract = row.get("abstract_sentences") or (
                split_sentences(row["abstract_text"]) if row.get("abstract_text") else []
            )
            pair = UnlabeledPair(
                pair_id=pair_id,
                doi=row.get("doi", ""),
                press_title=row.get("press_title", ""),
                press_lead=row.get("press_lead"),
                press_body=tuple(row.get("press_body", ())),
                abstract_sentences=tuple(abstract),
            )
            pair.press_sentences()  # validates the title now
        except (DataError, KeyError) as exc:
            logger.warning("skipping unlabeled pair %r: %s", pair_id, exc)
            skipped.append({"id": pair_id, "reason": str(exc)})
            continue
        pairs.append(pair)
    return pairs, skipped


# -- gold corpus build ------------------------------------------------------------------


@dataclass
class CorpusManifest:
    total_pairs: int
    label_counts: dict[int, int]
    splits: dict[str, dict]
    conclusion_sentences: int
    strength_sentences: int
    seed: int
    train_size: int
    skipped: list[dict] = field(default_factory=list)
    source_digests: dict[str, str] = field(default_factory=dict)
    output_digests: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "total_pairs": self.total_pairs,
            "label_counts": {str(k): v for k, v in sorted(self.label_counts.items())},
            "splits": self.splits,
            "conclusion_sentences": self.conclusion_sentences,
            "strength_sentences": self.strength_sentences,
            "seed": self.seed,
            "train_size": self.train_size,
            "skipped": self.skipped,
            "source_digests": self.source_digests,
            "output_digests": self.output_digests,
        }

    def summary(self) -> str:
        counts = ", ".join(f"{k}: {v}" for k, v in sorted(self.label_counts.items()))
        return (
            f"{self.total_pairs} pairs (labels {counts}); "
            f"train {self.splits['train']['size']} / test {self.splits['test']['size']}; "
            f"{self.conclusion_sentences} conclusion-labeled sentences; "
            f"{len(self.skipped)} records skipped"
        )


@dataclass
class GoldBuild:
    pairs: list[SentencePair]
    train: list[SentencePair]
    test: list[SentencePair]
    manifest: CorpusManifest


def _label_counts(pairs: Iterable[SentencePair]) -> dict[int, int]:
    counts = Counter(p.exaggeration_label for p in pairs)
    return {int(k): int(v) for k, v in sorted(counts.items())}


def build_gold(
    annotations_path: str | Path,
    abstracts_path: str | Path,
    press_path: str | Path,
    out_dir: str | Path,
    seed: int = 13,
    train_size: int = 100,
    threshold: float = ALIGNMENT_REVIEW_THRESHOLD,
    variant: str = "rougeL",
) -> GoldBuild:
    """Build the benchmark corpus from an annotation export.

    Maps six-level strength annotations to the four-level scheme (records
    whose strength has no mapping are skipped), aligns the annotated
    conclusion paraphrases to document sentences by ROUGE, derives
    exaggeration labels, splits train/test, and writes all output files
    plus a manifest. Alignments below ``threshold`` go to a review sidecar.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    annotations = read_jsonl(annotations_path)
    abstracts = {row["id"]: row for row in read_jsonl(abstracts_path)}
    press_docs = {row["id"]: row for row in read_jsonl(press_path)}

    pairs: list[SentencePair] = []
    aligned_docs: dict[str, dict] = {}
    review_rows: list[dict] = []
    skipped: list[dict] = []

    for row in sorted(annotations, key=lambda r: r["id"]):
        rid = row["id"]

        def skip(reason: str) -> None:
            logger.warning("skipping gold record %r: %s", rid, reason)
            skipped.append({"id": rid, "reason": reason})

        abstract_row = abstracts.get(rid)
        press_row = press_docs.get(rid)
        if abstract_row is None:
            skip("missing abstract document")
            continue
        if press_row is None:
            skip("missing press document")
            continue
        try:
            press_strength = map_sumner_to_li(int(row["press_strength"]))
            abstract_strength = map_sumner_to_li(int(row["abstract_strength"]))
        except (UsageError, KeyError, TypeError, ValueError) as exc:
            skip(f"bad strength annotation: {exc}")
            continue
        if press_strength is None or abstract_strength is None:
            skip("strength level has no mapping")
            continue
        abstract_sentences = list(
            abstract_row.get("sentences")
            or split_sentences(abstract_row.get("text", ""))
        )
        if not abstract_sentences:
            skip("abstract has no sentences")
            continue
        if not str(press_row.get("title", "")).strip():
            skip("press document has no title")
            continue
        press_sentences = [press_row["title"]]
        if press_row.get("lead"):
            press_sentences.append(press_row["lead"])
        press_sentences.extend(press_row.get("body", ()))

        try:
            press_match = match_sentence(
                row["press_conclusion"], press_sentences, variant, threshold
            )
            abstract_match = match_sentence(
                row["abstract_conclusion"], abstract_sentences, variant, threshold
            )
        except (UsageError, KeyError) as exc:
            skip(f"alignment failed: {exc}")
            continue
        for side, match, paraphrase in (
            ("press", press_match, row["press_conclusion"]),
            ("abstract", abstract_match, row["abstract_conclusion"]),
        ):
            if match.low_confidence:
                review_rows.append(
                    {
                        "id": rid,
                        "side": side,
                        "paraphrase": paraphrase,
                        "matched_index": match.index,
                        "f1": match.f1,
                    }
                )
        pairs.append(
            SentencePair(
                pair_id=rid,
                press_sentence=press_sentences[press_match.index],
                abstract_sentence=abstract_sentences[abstract_match.index],
                press_strength=int(press_strength),
                abstract_strength=int(abstract_strength),
                exaggeration_label=int(derive_exaggeration(press_strength, abstract_strength)),
            )
        )
        aligned_docs[rid] = {
            "press_sentences": press_sentences,
            "press_index": press_match.index,
            "abstract_sentences": abstract_sentences,
            "abstract_index": abstract_match.index,
        }

    if train_size >= len(pairs):
        raise UsageError(
            f"train_size {train_size} must be smaller than the {len(pairs)} built pairs"
        )
    rng = np.random.default_rng([seed, 7])
    order = rng.permutation(len(pairs))
    train_ids = {pairs[i].pair_id for i in order[:train_size]}
    train = [p for p in pairs if p.pair_id in train_ids]
    test = [p for p in pairs if p.pair_id not in train_ids]

    conclusion_records: list[ConclusionRecord] = []
    for pair in train:
        doc = aligned_docs[pair.pair_id]
        for side, sentences, gold_index in (
            ("press", doc["press_sentences"], doc["press_index"]),
            ("abstract", doc["abstract_sentences"], doc["abstract_index"]),
        ):
            for i, sentence in enumerate(sentences):
                conclusion_records.append(
                    ConclusionRecord(
                        record_id=f"{pair.pair_id}:{side}:{i}",
                        sentence=sentence,
                        is_conclusion=int(i == gold_index),
                    )
                )

    strength_records = [
        StrengthRecord(f"{p.pair_id}:press", p.press_sentence, "press", p.press_strength)
        for p in pairs
    ] + [
        StrengthRecord(f"{p.pair_id}:abstract", p.abstract_sentence, "abstract", p.abstract_strength)
        for p in pairs
    ]

    files = {
        "gold_pairs.jsonl": lambda path: save_sentence_pairs(pairs, path),
        "gold_train.jsonl": lambda path: save_sentence_pairs(train, path),
        "gold_test.jsonl": lambda path: save_sentence_pairs(test, path),
        "conclusions.jsonl": lambda path: save_conclusion_records(conclusion_records, path),
        "strength_sentences.jsonl": lambda path: save_strength_records(strength_records, path),
        "review.jsonl": lambda path: write_jsonl(path, review_rows),
    }
    for name, writer in files.items():
        writer(out / name)

    manifest = CorpusManifest(
        total_pairs=len(pairs),
        label_counts=_label_counts(pairs),
        splits={
            "train": {"size": len(train), "label_counts": {str(k): v for k, v in _label_counts(train).items()}},
            "test": {"size": len(test), "label_counts": {str(k): v for k, v in _label_counts(test).items()}},
        },
        conclusion_sentences=len(conclusion_records),
        strength_sentences=len(strength_records),
        seed=seed,
        train_size=train_size,
        skipped=skipped,
        source_digests={
            Path(p).name: sha256_file(p)
            for p in (annotations_path, abstracts_path, press_path)
        },
        output_digests={name: sha256_file(out / name) for name in files},
    )
    (out / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return GoldBuild(pairs=pairs, train=train, test=test, manifest=manifest)
