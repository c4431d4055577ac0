"""Metrics and analyses: macro precision/recall/F1, multi-seed aggregation,
learning curves, and error binning by strength-transition category."""

from __future__ import annotations

import csv
import math
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .errors import UsageError

STRENGTH_ABBREV = {0: "NA", 1: "COR", 2: "CON", 3: "CAU"}


@dataclass
class EvalReport:
    """Per-class and macro-averaged precision/recall/F1.

    Macro values are unweighted means over all declared classes; a class
    with neither gold nor predicted instances contributes 0.
    """

    labels: list[int]
    precision: dict[int, float]
    recall: dict[int, float]
    f1: dict[int, float]
    support: dict[int, int]
    confusion: list[list[int]]  # rows: gold, cols: predicted
    macro_precision: float
    macro_recall: float
    macro_f1: float

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "per_class": {
                str(l): {
                    "precision": self.precision[l],
                    "recall": self.recall[l],
                    "f1": self.f1[l],
                    "support": self.support[l],
                }
                for l in self.labels
            },
            "confusion": [list(row) for row in self.confusion],
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    def text_table(self, label_names: Mapping[int, str] | None = None) -> str:
        names = {l: (label_names or {}).get(l, str(l)) for l in self.labels}
        width = max(5, *(len(n) for n in names.values()))
        lines = [f"{'class':<{width}}  {'prec':>7}  {'recall':>7}  {'f1':>7}  {'support':>7}"]
        for l in self.labels:
            lines.append(
                f"{names[l]:<{width}}  {self.precision[l]:>7.4f}  {self.recall[l]:>7.4f}"
                f"  {self.f1[l]:>7.4f}  {self.support[l]:>7d}"
            )
        lines.append(
            f"{'macro':<{width}}  {self.macro_precision:>7.4f}  {self.macro_recall:>7.4f}"
            f"  {self.macro_f1:>7.4f}  {sum(self.support.values()):>7d}"
        )
        return "\n".join(lines)


def macro_prf(
    predictions: Sequence[int],
    golds: Sequence[int],
    labels: Sequence[int] | None = None,
) -> EvalReport:
    """Compute per-class and macro precision, recall, and F1.

    Args:
        predictions: predicted labels, aligned with golds.
        golds: gold labels.
        labels: the declared label space; defaults to the sorted union of
            the observed labels.

    Returns:
        EvalReport with p = tp/(tp+fp), r = tp/(tp+fn),
        F1 = 2pr/(p+r), each 0 when its denominator is 0.
    """
    if len(predictions) != len(golds):
        raise UsageError(
            f"{len(predictions)} predictions vs {len(golds)} golds"
        )
    if labels is None:
        labels = sorted(set(golds) | set(predictions))
    if not labels:
        raise UsageError("nothing to evaluate: no predictions and no declared labels")
    labels = [int(l) for l in labels]
    label_set = set(labels)
    for value in list(predictions) + list(golds):
        if value not in label_set:
            raise UsageError(f"label {value} outside the declared space {labels}")

    index = {l: i for i, l in enumerate(labels)}
    k = len(labels)
    confusion = [[0] * k for _ in range(k)]
    for p, g in zip(predictions, golds):
        confusion[index[g]][index[p]] += 1

    precision, recall, f1, support = {}, {}, {}, {}
    for l in labels:
        i = index[l]
        tp = confusion[i][i]
        fp = sum(confusion[j][i] for j in range(k)) - tp
        fn = sum(confusion[i]) - tp
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        precision[l] = p
        recall[l] = r
        f1[l] = 2 * p * r / (p + r) if p + r else 0.0
        support[l] = tp + fn

    return EvalReport(
        labels=labels,
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        confusion=confusion,
        macro_precision=sum(precision.values()) / k,
        macro_recall=sum(recall.values()) / k,
        macro_f1=sum(f1.values()) / k,
    )


@dataclass
class SeedAggregate:
    mean: dict
    per_seed: list[dict]

    def to_dict(self) -> dict:
        return {"mean": self.mean, "per_seed": self.per_seed}


def _mean_tree(trees: Sequence) -> object:
    first = trees[0]
    if isinstance(first, dict):
        return {k: _mean_tree([t[k] for t in trees]) for k in first}
    if isinstance(first, list):
        return [_mean_tree([t[i] for t in trees]) for i in range(len(first))]
    # fsum is exactly rounded, so the mean is permutation-invariant
    return math.fsum(trees) / len(trees)


def aggregate_seeds(reports: Sequence[EvalReport]) -> SeedAggregate:
    """Arithmetic mean of every scalar field across seed reports."""
    if not reports:
        raise UsageError("no reports to aggregate")
    labels = reports[0].labels
    for r in reports[1:]:
        if r.labels != labels:
            raise UsageError("reports use different label spaces")
    dicts = [r.to_dict() for r in reports]
    mean = _mean_tree([{k: v for k, v in d.items() if k != "labels"} for d in dicts])
    mean["labels"] = list(labels)
    return SeedAggregate(mean=mean, per_seed=dicts)


def learning_curve(
    train_fn: Callable[[Sequence, int], EvalReport],
    records: Sequence,
    sizes: Sequence[int],
    seeds: Sequence[int],
    label_of: Callable[[object], int],
) -> tuple[list[tuple[int, float]], list[tuple[int, int, float]]]:
    """Macro-F1 as a function of training-set size.

    For each size, the training data is stratified-subsampled (point seed =
    run seed + size index), ``train_fn(subset, seed)`` trains and evaluates
    on its fixed test set, and F1 is averaged over seeds. Returns
    (curve rows (size, mean_f1), long rows (size, seed, f1)).
    """
    from .data import stratified_sample

    if list(sizes) != sorted(sizes):
        raise UsageError("sizes must be ascending")
    if not seeds:
        raise UsageError("at least one seed is required")
    curve: list[tuple[int, float]] = []
    long_rows: list[tuple[int, int, float]] = []
    for size_index, size in enumerate(sizes):
        if size > len(records):
            raise UsageError(f"size {size} exceeds the {len(records)} available records")
        f1s = []
        for seed in seeds:
            subset = stratified_sample(records, size, seed + size_index, label_of=label_of)
            report = train_fn(subset, seed)
            f1s.append(report.macro_f1)
            long_rows.append((size, seed, report.macro_f1))
        curve.append((size, sum(f1s) / len(f1s)))
    return curve, long_rows


def write_curve_csv(long_rows: Sequence[tuple[int, int, float]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["size", "seed", "f1"])
        for size, seed, f1 in long_rows:
            writer.writerow([size, seed, f1])


@dataclass
class TransitionBin:
    """Error statistics for one abstract-strength -> press-strength category."""

    key: str
    count: int
    wrong: int

    @property
    def proportion_wrong(self) -> float:
        return self.wrong / self.count if self.count else 0.0

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "count": self.count,
            "wrong": self.wrong,
            "proportion_wrong": self.proportion_wrong,
        }


def transition_error_bins(
    pairs: Sequence,
    prediction_sets: Sequence[Sequence[int]] | Sequence[int],
) -> list[TransitionBin]:
    """Bin pairs by (abstract strength -> press strength) and report the
    proportion each bin that the model(s) got wrong.

    ``prediction_sets`` is either one prediction list or several; with
    several, a pair counts as wrong only when every set mispredicts it
    (the "all models wrong" view).
    """
    if not pairs:
        raise UsageError("no pairs to bin")
    if prediction_sets and not isinstance(prediction_sets[0], (list, tuple)):
        prediction_sets = [list(prediction_sets)]
    prediction_sets = [list(p) for p in prediction_sets]
    for preds in prediction_sets:
        if len(preds) != len(pairs):
            raise UsageError("prediction set length does not match pairs")

    counts: dict[str, int] = {}
    wrongs: dict[str, int] = {}
    for i, pair in enumerate(pairs):
        press = getattr(pair, "press_strength", None)
        abstract = getattr(pair, "abstract_strength", None)
        gold = getattr(pair, "exaggeration_label", None)
        if press is None or abstract is None:
            raise UsageError(f"pair {getattr(pair, 'pair_id', i)!r} is missing gold strengths")
        key = f"{STRENGTH_ABBREV[int(abstract)]}->{STRENGTH_ABBREV[int(press)]}"
        counts[key] = counts.get(key, 0) + 1
        if all(preds[i] != gold for preds in prediction_sets):
            wrongs[key] = wrongs.get(key, 0) + 1
    return [
        TransitionBin(key=k, count=counts[k], wrong=wrongs.get(k, 0))
        for k in sorted(counts)
    ]
