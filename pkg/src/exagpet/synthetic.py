"""Synthetic corpora and oracle mock tables.

Sentences carry side-tagged strength markers (``pressS2`` / ``absS1``) so a
substring-match table can act as a perfect teacher, while a linear student
over hashed bag-of-words features can learn the task from soft labels.
Used by the test suite and the demo scripts.
"""

from __future__ import annotations

import itertools
import json
from pathlib import Path

from .backend import MockBackend, TableEntry, Vocabulary
from .pvp import PvpRegistry, registry
from .tasks import (
    ConclusionRecord,
    SentencePair,
    StrengthRecord,
    derive_exaggeration,
)

ORACLE_BOOST = 10.0
CONCLUSION_MARKER = "keyfinding"

# scaffold substrings unique to each pattern family, so strength entries
# never fire inside pair-inference renderings and vice versa
_T1_SCAFFOLDS = ("The reporters claims are", "The media claims are")
_T2_SCAFFOLD = "The claim strength is"

_STRENGTH_WORDS = {0: "unrelated", 1: "associated", 2: "conditional", 3: "causal"}


def press_tag(strength: int) -> str:
    return f"pressS{strength}"


def abstract_tag(strength: int) -> str:
    return f"absS{strength}"


def strength_sentence(side: str, strength: int, index: int) -> str:
    tag = press_tag(strength) if side == "press" else abstract_tag(strength)
    return f"Trial {index} reports {_STRENGTH_WORDS[strength]} {tag} effects."


def conclusion_sentence(index: int, is_conclusion: bool) -> str:
    if is_conclusion:
        return f"Overall the {CONCLUSION_MARKER} of study {index} stands."
    return f"Background detail {index} describes methods."


_PAIR_GRID = list(itertools.product(range(4), range(4)))


def make_pair_corpus(n: int, start: int = 0) -> list[SentencePair]:
    """n sentence pairs cycling through all 16 strength combinations."""
    pairs = []
    for i in range(n):
        press, abstract = _PAIR_GRID[(start + i) % len(_PAIR_GRID)]
        pairs.append(
            SentencePair(
                pair_id=f"pair{start + i:03d}",
                press_sentence=strength_sentence("press", press, start + i),
                abstract_sentence=strength_sentence("abstract", abstract, start + i),
                press_strength=press,
                abstract_strength=abstract,
                exaggeration_label=int(derive_exaggeration(press, abstract)),
            )
        )
    return pairs


def make_strength_records(n: int, start: int = 0) -> list[StrengthRecord]:
    """n single sentences alternating side and cycling strength."""
    records = []
    for i in range(n):
        side = "press" if (start + i) % 2 == 0 else "abstract"
        strength = (start + i) % 4
        records.append(
            StrengthRecord(
                record_id=f"str{start + i:03d}",
                sentence=strength_sentence(side, strength, 1000 + start + i),
                source=side,
                strength=strength,
            )
        )
    return records


def make_conclusion_records(n: int, start: int = 0) -> list[ConclusionRecord]:
    records = []
    for i in range(n):
        is_conc = (start + i) % 2 == 0
        records.append(
            ConclusionRecord(
                record_id=f"conc{start + i:03d}",
                sentence=conclusion_sentence(start + i, is_conc),
                is_conclusion=int(is_conc),
            )
        )
    return records


def oracle_vocabulary(reg: PvpRegistry | None = None) -> Vocabulary:
    reg = reg or registry()
    tokens: list[str] = []
    for pvp in reg.all():
        for tok in pvp.verbalizer.all_tokens():
            if tok not in tokens:
                tokens.append(tok)
    tokens.append("[MASK]")
    return Vocabulary(tuple(tokens), "[MASK]")


def oracle_table_entries(reg: PvpRegistry | None = None) -> list[TableEntry]:
    """Entries that make every registry pattern a perfect zero-shot scorer
    on marker sentences."""
    reg = reg or registry()
    entries: list[TableEntry] = []
    # pair-inference: boost the correct exaggeration label per combination
    for (press, abstract) in _PAIR_GRID:
        label = int(derive_exaggeration(press, abstract))
        condition = f"{press_tag(press)}&&{abstract_tag(abstract)}"
        for scaffold, pvp in zip(_T1_SCAFFOLDS, reg.t1):
            for tok in pvp.verbalizer.tokens(label):
                entries.append(TableEntry(f"{scaffold}&&{condition}", tok, ORACLE_BOOST))
    # claim strength: boost the correct strength label per side tag
    for strength in range(4):
        for tag in (press_tag(strength), abstract_tag(strength)):
            for tok in reg.t2[0].verbalizer.tokens(strength):
                entries.append(TableEntry(f"{_T2_SCAFFOLD}&&{tag}", tok, ORACLE_BOOST))
    # conclusion detection: the marker word decides
    entries.append(TableEntry(CONCLUSION_MARKER, "Conclusion", ORACLE_BOOST))
    entries.append(TableEntry("Background detail", "Text", ORACLE_BOOST))
    return entries


def oracle_backend_factory(
    feature_dim: int = 1024, max_length: int = 512, extra_entries: list[TableEntry] = ()
):
    """Factory of fresh oracle-table member backends."""
    vocab = oracle_vocabulary()
    entries = oracle_table_entries() + list(extra_entries)

    def factory() -> MockBackend:
        return MockBackend(
            vocab, table=list(entries), feature_dim=feature_dim, max_length=max_length
        )

    return factory


def student_backend_factory(num_labels: int, feature_dim: int = 1024, max_length: int = 512):
    """Factory of fresh, blank classifier students (everything learned)."""
    vocab = oracle_vocabulary()

    def factory() -> MockBackend:
        return MockBackend(
            vocab, feature_dim=feature_dim, num_labels=num_labels, max_length=max_length
        )

    return factory


def oracle_mock_config(num_labels: int | None = None, feature_dim: int = 1024) -> dict:
    """The oracle backend as a mock-table JSON config (for the CLI)."""
    vocab = oracle_vocabulary()
    head_entries = []
    if num_labels == 3:
        # oracle classifier head for pair inputs
        for (press, abstract) in _PAIR_GRID:
            label = int(derive_exaggeration(press, abstract))
            head_entries.append(
                {
                    "pattern": f"{press_tag(press)}&&{abstract_tag(abstract)}",
                    "label": label,
                    "score": ORACLE_BOOST,
                }
            )
    if num_labels == 4:
        for strength in range(4):
            for tag in (press_tag(strength), abstract_tag(strength)):
                head_entries.append({"pattern": tag, "label": strength, "score": ORACLE_BOOST})
    return {
        "vocabulary": list(vocab.tokens),
        "mask_token": vocab.mask_token,
        "feature_dim": feature_dim,
        "num_labels": num_labels,
        "max_length": 512,
        "entries": [
            {"pattern": e.pattern, "token": e.key, "score": e.score}
            for e in oracle_table_entries()
        ],
        "head_entries": head_entries,
    }


def write_mock_table(path: str | Path, num_labels: int | None = None, feature_dim: int = 1024):
    Path(path).write_text(
        json.dumps(oracle_mock_config(num_labels, feature_dim), indent=2) + "\n",
        encoding="utf-8",
    )
