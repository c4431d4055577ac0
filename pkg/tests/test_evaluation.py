"""Metric formulas, seed aggregation, learning curves, transition bins."""

import numpy as np
import pytest

from exagpet.errors import UsageError
from exagpet.evaluation import (
    EvalReport,
    aggregate_seeds,
    learning_curve,
    macro_prf,
    transition_error_bins,
    write_curve_csv,
)
from exagpet.tasks import SentencePair, derive_exaggeration


def brute_force_prf(predictions, golds, labels):
    """Independent oracle: direct tp/fp/fn counting per class."""
    per_class = {}
    for label in labels:
        tp = sum(1 for p, g in zip(predictions, golds) if p == label and g == label)
        fp = sum(1 for p, g in zip(predictions, golds) if p == label and g != label)
        fn = sum(1 for p, g in zip(predictions, golds) if p != label and g == label)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[label] = (precision, recall, f1)
    k = len(labels)
    macro = tuple(sum(v[i] for v in per_class.values()) / k for i in range(3))
    return per_class, macro


class TestMacroPrf:
    def test_all_correct(self):
        report = macro_prf([0, 1, 2], [0, 1, 2])
        assert report.macro_f1 == pytest.approx(1.0)

    def test_hand_computed_degenerate_predictions(self):
        golds = [0, 0, 1, 2]
        preds = [0, 0, 0, 0]
        report = macro_prf(preds, golds, labels=[0, 1, 2])
        assert report.f1[0] == pytest.approx(2 / 3, abs=1e-9)
        assert report.f1[1] == 0.0
        assert report.f1[2] == 0.0
        assert report.macro_f1 == pytest.approx(2 / 9, abs=1e-9)
        assert report.macro_precision == pytest.approx((0.5 + 0 + 0) / 3, abs=1e-9)
        assert report.macro_recall == pytest.approx((1 + 0 + 0) / 3, abs=1e-9)

    def test_order_invariance(self):
        rng = np.random.default_rng(0)
        golds = list(rng.integers(0, 3, 40))
        preds = list(rng.integers(0, 3, 40))
        base = macro_prf(preds, golds, labels=[0, 1, 2])
        order = rng.permutation(40)
        permuted = macro_prf(
            [preds[i] for i in order], [golds[i] for i in order], labels=[0, 1, 2]
        )
        assert permuted.to_dict() == base.to_dict()

    def test_length_mismatch(self):
        with pytest.raises(UsageError):
            macro_prf([0], [0, 1])

    def test_label_outside_space(self):
        with pytest.raises(UsageError):
            macro_prf([5], [0], labels=[0, 1])

    def test_empty_inputs_rejected(self):
        with pytest.raises(UsageError):
            macro_prf([], [])
        # an empty set against a declared label space is still well-defined
        report = macro_prf([], [], labels=[0, 1])
        assert report.macro_f1 == 0.0

    def test_confusion_rows_sum_to_support(self):
        rng = np.random.default_rng(4)
        golds = list(rng.integers(0, 4, 60))
        preds = list(rng.integers(0, 4, 60))
        report = macro_prf(preds, golds, labels=[0, 1, 2, 3])
        for i, label in enumerate(report.labels):
            assert sum(report.confusion[i]) == report.support[label]

    def test_zero_support_class_contributes_zero(self):
        report = macro_prf([0, 0], [0, 0], labels=[0, 1])
        assert report.f1[1] == 0.0
        assert report.macro_f1 == pytest.approx(0.5)

    def test_matches_brute_force_on_randomized_cases(self):
        rng = np.random.default_rng(99)
        for _ in range(200):
            k = int(rng.integers(2, 5))
            n = int(rng.integers(1, 100))
            labels = list(range(k))
            golds = list(map(int, rng.integers(0, k, n)))
            preds = list(map(int, rng.integers(0, k, n)))
            report = macro_prf(preds, golds, labels=labels)
            per_class, macro = brute_force_prf(preds, golds, labels)
            for label in labels:
                assert report.precision[label] == pytest.approx(per_class[label][0], abs=1e-9)
                assert report.recall[label] == pytest.approx(per_class[label][1], abs=1e-9)
                assert report.f1[label] == pytest.approx(per_class[label][2], abs=1e-9)
            assert report.macro_precision == pytest.approx(macro[0], abs=1e-9)
            assert report.macro_recall == pytest.approx(macro[1], abs=1e-9)
            assert report.macro_f1 == pytest.approx(macro[2], abs=1e-9)

    def test_text_table_renders(self):
        report = macro_prf([0, 1], [0, 1], labels=[0, 1])
        table = report.text_table({0: "down", 1: "same"})
        assert "down" in table and "macro" in table


class TestAggregateSeeds:
    def reports(self, pairs):
        return [macro_prf(p, g, labels=[0, 1, 2]) for p, g in pairs]

    def test_identical_reports(self):
        reports = self.reports([([0, 1, 2], [0, 1, 2])] * 3)
        agg = aggregate_seeds(reports)
        assert agg.mean["macro_f1"] == pytest.approx(1.0)
        assert len(agg.per_seed) == 3

    def test_mean_of_two(self):
        r1 = EvalReport([0], {0: 1.0}, {0: 1.0}, {0: 0.40}, {0: 1}, [[1]], 1.0, 1.0, 0.40)
        r2 = EvalReport([0], {0: 1.0}, {0: 1.0}, {0: 0.60}, {0: 1}, [[1]], 1.0, 1.0, 0.60)
        agg = aggregate_seeds([r1, r2])
        assert agg.mean["macro_f1"] == pytest.approx(0.50)

    def test_mean_matches_arithmetic_recomputation(self):
        rng = np.random.default_rng(1)
        pairs = [
            (list(rng.integers(0, 3, 30)), list(rng.integers(0, 3, 30))) for _ in range(5)
        ]
        reports = self.reports(pairs)
        agg = aggregate_seeds(reports)
        expected = sum(r.macro_f1 for r in reports) / 5
        assert agg.mean["macro_f1"] == pytest.approx(expected, abs=1e-12)
        expected_class = sum(r.f1[1] for r in reports) / 5
        assert agg.mean["per_class"]["1"]["f1"] == pytest.approx(expected_class, abs=1e-12)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        reports = self.reports(
            [(list(rng.integers(0, 3, 20)), list(rng.integers(0, 3, 20))) for _ in range(4)]
        )
        forward = aggregate_seeds(reports)
        backward = aggregate_seeds(list(reversed(reports)))
        assert forward.mean == backward.mean

    def test_mixed_label_spaces_rejected(self):
        a = macro_prf([0], [0], labels=[0, 1])
        b = macro_prf([0], [0], labels=[0, 1, 2])
        with pytest.raises(UsageError):
            aggregate_seeds([a, b])


class Labeled:
    def __init__(self, label):
        self.label = label


class TestLearningCurve:
    RECORDS = [Labeled(i % 2) for i in range(120)]

    def test_oracle_model_hits_one(self):
        def train_fn(subset, seed):
            return macro_prf([0, 1], [0, 1], labels=[0, 1])

        curve, rows = learning_curve(
            train_fn, self.RECORDS, sizes=[10], seeds=[1], label_of=lambda r: r.label
        )
        assert curve == [(10, 1.0)]

    def test_row_count_matches_sizes(self):
        def train_fn(subset, seed):
            return macro_prf([0], [0], labels=[0])

        curve, rows = learning_curve(
            train_fn, self.RECORDS, sizes=[4, 8, 16], seeds=[1, 2], label_of=lambda r: r.label
        )
        assert len(curve) == 3
        assert len(rows) == 6

    def test_matches_closed_form_of_monotone_oracle(self):
        # mock trainer whose F1 is min(1, size/100) by construction
        def train_fn(subset, seed):
            f1 = min(1.0, len(subset) / 100)
            return EvalReport([0], {0: f1}, {0: f1}, {0: f1}, {0: 1}, [[1]], f1, f1, f1)

        sizes = [10, 50, 100, 120]
        curve, _ = learning_curve(
            train_fn, self.RECORDS, sizes=sizes, seeds=[1, 2, 3], label_of=lambda r: r.label
        )
        assert curve == [(s, pytest.approx(min(1.0, s / 100))) for s in sizes]

    def test_size_exceeding_data_rejected(self):
        def train_fn(subset, seed):
            return macro_prf([0], [0], labels=[0])

        with pytest.raises(UsageError):
            learning_curve(
                train_fn, self.RECORDS, sizes=[500], seeds=[1], label_of=lambda r: r.label
            )

    def test_sizes_must_be_ascending(self):
        def train_fn(subset, seed):
            return macro_prf([0], [0], labels=[0])

        with pytest.raises(UsageError):
            learning_curve(
                train_fn, self.RECORDS, sizes=[16, 8], seeds=[1], label_of=lambda r: r.label
            )

    def test_csv_output(self, tmp_path):
        rows = [(10, 1, 0.5), (10, 2, 0.7)]
        path = tmp_path / "curve.csv"
        write_curve_csv(rows, path)
        assert path.read_text().splitlines() == ["size,seed,f1", "10,1,0.5", "10,2,0.7"]


def bin_pair(i, press, abstract):
    return SentencePair(
        pair_id=f"b{i}",
        press_sentence="press words.",
        abstract_sentence="abstract words.",
        press_strength=press,
        abstract_strength=abstract,
        exaggeration_label=int(derive_exaggeration(press, abstract)),
    )


class TestTransitionBins:
    def test_all_correct_gives_zero_proportions(self):
        pairs = [bin_pair(i, i % 4, (i + 1) % 4) for i in range(8)]
        predictions = [p.exaggeration_label for p in pairs]
        bins = transition_error_bins(pairs, predictions)
        assert all(b.proportion_wrong == 0.0 for b in bins)

    def test_half_wrong_in_one_bin(self):
        # CON -> CAU: abstract strength 2, press strength 3
        pairs = [bin_pair(i, 3, 2) for i in range(4)]
        predictions = [2, 2, 0, 0]  # gold is 2 (exaggerates); half wrong
        bins = transition_error_bins(pairs, predictions)
        assert len(bins) == 1
        assert bins[0].key == "CON->CAU"
        assert bins[0].count == 4
        assert bins[0].proportion_wrong == pytest.approx(0.5)

    def test_key_set_within_sixteen_enumerated(self):
        abbrev = ["NA", "COR", "CON", "CAU"]
        valid = {f"{a}->{p}" for a in abbrev for p in abbrev}
        pairs = [bin_pair(i, (i * 7) % 4, (i * 3) % 4) for i in range(40)]
        bins = transition_error_bins(pairs, [p.exaggeration_label for p in pairs])
        assert {b.key for b in bins} <= valid

    def test_counts_sum_to_dataset_size(self):
        pairs = [bin_pair(i, (i * 5) % 4, i % 4) for i in range(23)]
        bins = transition_error_bins(pairs, [1] * 23)
        assert sum(b.count for b in bins) == 23

    def test_all_models_wrong_mode(self):
        pairs = [bin_pair(0, 3, 2), bin_pair(1, 3, 2)]
        gold = [p.exaggeration_label for p in pairs]  # both 2
        model_a = [0, 2]
        model_b = [1, 0]
        bins = transition_error_bins(pairs, [model_a, model_b])
        # only the first pair is wrong under every model
        assert bins[0].wrong == 1

    def test_missing_strengths_rejected(self):
        pair = SentencePair("x", "press.", "abstract.", None, None, 1)
        with pytest.raises(UsageError):
            transition_error_bins([pair], [1])
