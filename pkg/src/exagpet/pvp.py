"""Patterns, verbalizers, and the built-in pattern-verbalizer registry.

A pattern is a cloze template with an ``{a}`` slot, an optional ``{b}``
slot, at most one role-choice group written ``[press variant|abstract
variant]``, and exactly one mask sentinel. `` || `` inside a template marks
the boundary between the two encoder segments rather than literal text.

Verbalizers map each task label to an ordered set of tokens whose
mask-position scores stand in for that label.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .backend import DEFAULT_MASK, Backend, MaskedSequence
from .errors import ConfigurationError, CoverageError, UsageError

TASK_T1 = "t1"
TASK_T2 = "t2"
TASK_CONCLUSION = "conclusion"

ROLE_PRESS = "press"
ROLE_ABSTRACT = "abstract"

_ROLE_GROUP = re.compile(r"\[([^\[\]|]*)\|([^\[\]|]*)\]")
_TEMPLATE_MASK = "[MASK]"
_SEGMENT_SPLIT = re.compile(r"\s*\|\|\s*")


@dataclass(frozen=True)
class Pattern:
    """Cloze template. ``pair_separator`` is the text inserted between the
    two segments when the template contains ``||`` (empty by default; the
    boundary itself is carried by MaskedSequence.segment_boundary)."""

    template: str
    pair_separator: str = ""
    name: str = ""

    def __post_init__(self):
        stripped = self.template.replace(_TEMPLATE_MASK, "", 1)
        if _TEMPLATE_MASK in _ROLE_GROUP.sub("", stripped):
            raise UsageError(f"template {self.name or self.template!r} has multiple masks")
        if _TEMPLATE_MASK not in self.template:
            raise UsageError(f"template {self.name or self.template!r} has no mask")

    @property
    def uses_b(self) -> bool:
        return "{b}" in self.template

    @property
    def has_role_choice(self) -> bool:
        return _ROLE_GROUP.search(self.template) is not None

    def apply(
        self,
        a: str,
        b: str | None = None,
        role: str | None = None,
        mask_token: str = DEFAULT_MASK,
    ) -> MaskedSequence:
        """Render the template into a MaskedSequence.

        The first alternative of a role-choice group is the press variant,
        the second the abstract variant. Placeholders are substituted
        verbatim.
        """
        if not a or not a.strip():
            raise UsageError("sentence a must be non-empty")
        if self.uses_b and (b is None or not b.strip()):
            raise UsageError(f"pattern {self.name or self.template!r} requires sentence b")
        if not self.uses_b and b is not None:
            raise UsageError(f"pattern {self.name or self.template!r} does not take sentence b")
        text = self.template
        if self.has_role_choice:
            if role not in (ROLE_PRESS, ROLE_ABSTRACT):
                raise UsageError(
                    f"pattern {self.name or self.template!r} requires role "
                    f"'{ROLE_PRESS}' or '{ROLE_ABSTRACT}', got {role!r}"
                )
            pick = 1 if role == ROLE_PRESS else 2
            text = _ROLE_GROUP.sub(lambda m: m.group(pick), text)
        # single-pass substitution so slot-like text inside a is never rescanned
        text = re.sub(r"\{a\}|\{b\}", lambda m: a if m.group() == "{a}" else b, text)
        if mask_token != _TEMPLATE_MASK:
            text = text.replace(_TEMPLATE_MASK, mask_token)
        parts = _SEGMENT_SPLIT.split(text)
        if len(parts) == 1:
            return MaskedSequence(text, None, mask_token)
        if len(parts) != 2:
            raise UsageError("templates support at most one segment boundary")
        first, second = parts
        joined = first + self.pair_separator + second
        return MaskedSequence(joined, len(first) + len(self.pair_separator), mask_token)


@dataclass(frozen=True)
class Verbalizer:
    """Label -> ordered token set. Token sets of distinct labels are disjoint."""

    mapping: Mapping[int, tuple[str, ...]]

    def __post_init__(self):
        clean = {int(l): tuple(ts) for l, ts in self.mapping.items()}
        object.__setattr__(self, "mapping", clean)
        seen: dict[str, int] = {}
        for label, tokens in clean.items():
            if not tokens:
                raise UsageError(f"label {label} has an empty verbalizer set")
            for tok in tokens:
                if tok in seen:
                    raise UsageError(
                        f"token {tok!r} verbalizes both label {seen[tok]} and {label}"
                    )
                seen[tok] = label

    @property
    def labels(self) -> tuple[int, ...]:
        return tuple(sorted(self.mapping))

    def tokens(self, label: int) -> tuple[str, ...]:
        try:
            return self.mapping[label]
        except KeyError:
            raise UsageError(f"no verbalizer for label {label}") from None

    def covers(self, labels: Iterable[int]) -> bool:
        return set(labels) <= set(self.mapping)

    def all_tokens(self) -> tuple[str, ...]:
        return tuple(t for label in self.labels for t in self.mapping[label])


@dataclass(frozen=True)
class Pvp:
    """One pattern-verbalizer pair, identified by task and index."""

    task: str
    index: int
    pattern: Pattern
    verbalizer: Verbalizer


@dataclass(frozen=True)
class PvpTuple:
    """Complementary main/auxiliary pair sharing the same index."""

    main: Pvp
    auxiliary: Pvp

    def __post_init__(self):
        if self.main.index != self.auxiliary.index:
            raise ConfigurationError(
                f"tuple indices differ: {self.main.index} vs {self.auxiliary.index}"
            )

    @property
    def index(self) -> int:
        return self.main.index


_T1_TEMPLATES = [
    "Scientists claim {a}. || Reporters claim {b}.The reporters claims are [MASK]",
    "Academic literature claims {a}. || Popular media claims {b}. The media claims are [MASK]",
]

_T2_TEMPLATES = [
    "[Reporters|Scientists] say {a}. The claim strength is [MASK]",
    "[Academic literature|Popular media] says {a}. The claim strength is [MASK]",
]

_CONCLUSION_TEMPLATES = [
    "[MASK]: {a}",
    "[MASK] - {a}",
    '"[MASK]" statement: {a}',
    "{a} ([MASK])",
    "([MASK]) {a}",
    "[Type: [MASK]] {a}",
]

_T1_VERBALIZERS = [
    {
        0: ("preliminary", "competing", "uncertainties"),
        1: ("following", "explicit"),
        2: ("mistaken", "wrong", "hollow", "naive", "false", "lies"),
    },
    {
        0: ("hypothetical", "theoretical", "conditional"),
        1: ("identical",),
        # "artifical" is reproduced as published
        2: ("mistaken", "wrong", "premature", "fantasy", "noisy", "artifical"),
    },
]

# shared by both strength patterns
_T2_VERBALIZER = {
    0: ("sufficient", "enough", "authentic", "medium"),
    1: ("inferred", "estimated", "calculated", "borderline", "approximately", "variable", "roughly"),
    2: ("cautious", "premature", "uncertain", "conflicting", "limited"),
    3: ("touted", "proven", "replicated", "promoted", "distorted"),
}

_CONCLUSION_VERBALIZER = {0: ("Text",), 1: ("Conclusion",)}


def _clean_spacing(template: str) -> str:
    # insert the missing space after a sentence period glued to the next word
    return re.sub(r"\.(?=[A-Za-z])", ". ", template.replace(".||", ". ||"))


@dataclass(frozen=True)
class PvpRegistry:
    t1: tuple[Pvp, ...]
    t2: tuple[Pvp, ...]
    conclusion: tuple[Pvp, ...]

    def for_task(self, task: str) -> tuple[Pvp, ...]:
        try:
            return {TASK_T1: self.t1, TASK_T2: self.t2, TASK_CONCLUSION: self.conclusion}[task]
        except KeyError:
            raise UsageError(f"unknown task {task!r}") from None

    def all(self) -> tuple[Pvp, ...]:
        return self.t1 + self.t2 + self.conclusion

    def tuples(self, main_task: str, aux_task: str) -> tuple[PvpTuple, ...]:
        return make_tuples(self.for_task(main_task), self.for_task(aux_task))


def registry(normalize_whitespace: bool = False) -> PvpRegistry:
    """The built-in PVPs: 2 pair-inference patterns, 2 claim-strength
    patterns, and 6 conclusion-detection patterns.

    Templates are reproduced with their published spacing (including the
    missing space in the first pair-inference template) unless
    ``normalize_whitespace`` is set.
    """

    def mk(task, idx, template, verb):
        if normalize_whitespace:
            template = _clean_spacing(template)
        return Pvp(task, idx, Pattern(template, name=f"{task}[{idx}]"), Verbalizer(verb))

    t1 = tuple(
        mk(TASK_T1, i, tpl, verb)
        for i, (tpl, verb) in enumerate(zip(_T1_TEMPLATES, _T1_VERBALIZERS))
    )
    t2 = tuple(mk(TASK_T2, i, tpl, _T2_VERBALIZER) for i, tpl in enumerate(_T2_TEMPLATES))
    conclusion = tuple(
        mk(TASK_CONCLUSION, i, tpl, _CONCLUSION_VERBALIZER)
        for i, tpl in enumerate(_CONCLUSION_TEMPLATES)
    )
    return PvpRegistry(t1, t2, conclusion)


def make_tuples(main_pvps: Sequence[Pvp], aux_pvps: Sequence[Pvp]) -> tuple[PvpTuple, ...]:
    """Pair main and auxiliary PVPs by index."""
    if len(main_pvps) > len(aux_pvps):
        raise ConfigurationError(
            f"{len(main_pvps)} main patterns but only {len(aux_pvps)} auxiliary ones"
        )
    return tuple(PvpTuple(m, a) for m, a in zip(main_pvps, aux_pvps))


# -- JSON round-trip ----------------------------------------------------------


def pvp_to_dict(pvp: Pvp) -> dict:
    return {
        "task": pvp.task,
        "index": pvp.index,
        "template": pvp.pattern.template,
        "pair_separator": pvp.pattern.pair_separator,
        "verbalizers": {str(l): list(ts) for l, ts in pvp.verbalizer.mapping.items()},
    }


def pvp_from_dict(d: Mapping) -> Pvp:
    return Pvp(
        task=d["task"],
        index=int(d["index"]),
        pattern=Pattern(
            d["template"],
            pair_separator=d.get("pair_separator", ""),
            name=f"{d['task']}[{d['index']}]",
        ),
        verbalizer=Verbalizer({int(l): tuple(ts) for l, ts in d["verbalizers"].items()}),
    )


def save_pvps(pvps: Iterable[Pvp], path: str | Path) -> None:
    Path(path).write_text(
        json.dumps([pvp_to_dict(p) for p in pvps], indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def load_pvps(path: str | Path) -> list[Pvp]:
    return [pvp_from_dict(d) for d in json.loads(Path(path).read_text(encoding="utf-8"))]


# -- simplified automatic verbalizer search -----------------------------------


def search_verbalizers(
    pattern: Pattern,
    labeled: Sequence[tuple],
    backend: Backend,
    k: int,
    label_space: Sequence[int] | None = None,
    candidates: Sequence[str] | None = None,
) -> dict[int, list[str]]:
    """Rank candidate tokens per label by their mask-score margin.

    For each (token, label) the statistic is the mean raw mask-position
    score of the token over that label's examples minus the mean over all
    other labels' examples. Tokens are assigned greedily in global margin
    order (ties broken by label order), which keeps the per-label sets
    disjoint. ``labeled`` holds (instance, label) pairs where an instance
    is anything ``pattern.apply`` accepts via its ``a``/``b``/``role``
    attributes or a plain string for single-slot patterns.
    """
    if k < 1:
        raise UsageError("k must be >= 1")
    if not labeled:
        raise UsageError("labeled examples must be non-empty")
    labels = list(label_space) if label_space is not None else sorted({l for _, l in labeled})
    by_label: dict[int, list] = {l: [] for l in labels}
    for inst, label in labeled:
        if label not in by_label:
            raise UsageError(f"label {label} outside the declared label space {labels}")
        by_label[label].append(inst)
    for label, insts in by_label.items():
        if not insts:
            raise CoverageError(f"label {label} has zero examples")
    if candidates is None:
        candidates = [t for t in backend.vocabulary.tokens if t != backend.vocabulary.mask_token]
    candidates = list(candidates)

    def render(inst) -> MaskedSequence:
        if isinstance(inst, str):
            return pattern.apply(inst, mask_token=backend.vocabulary.mask_token)
        return pattern.apply(
            getattr(inst, "a"),
            b=getattr(inst, "b", None),
            role=getattr(inst, "role", None),
            mask_token=backend.vocabulary.mask_token,
        )

    # mean score per (label, token)
    means: dict[int, dict[str, float]] = {}
    for label, insts in by_label.items():
        sums = {c: 0.0 for c in candidates}
        for inst in insts:
            scores = backend.score_masked(render(inst), candidates)
            for c in candidates:
                sums[c] += scores[c]
        means[label] = {c: s / len(insts) for c, s in sums.items()}

    ranked: list[tuple[float, int, int, str]] = []
    for li, label in enumerate(labels):
        others = [ol for ol in labels if ol != label]
        for c in candidates:
            other_mean = sum(means[ol][c] for ol in others) / len(others) if others else 0.0
            margin = means[label][c] - other_mean
            ranked.append((-margin, li, candidates.index(c), c))
    ranked.sort()

    assigned: dict[str, int] = {}
    out: dict[int, list[str]] = {l: [] for l in labels}
    for neg_margin, li, _, token in ranked:
        label = labels[li]
        if token in assigned or len(out[label]) >= k:
            continue
        assigned[token] = label
        out[label].append(token)
    return out
