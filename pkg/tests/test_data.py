"""ROUGE alignment, truncation, sampling, fetching, and the gold build."""

import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exagpet.data import (
    TransportResponse,
    build_gold,
    fetch_abstract,
    load_conclusion_records,
    load_sentence_pairs,
    load_strength_records,
    load_unlabeled_pairs,
    match_sentence,
    rouge_score,
    save_sentence_pairs,
    sha256_file,
    split_sentences,
    stratified_sample,
    truncate_press,
)
from exagpet.errors import DataError, RateLimitError, UsageError
from exagpet.tasks import SentencePair, derive_exaggeration

FIXTURES = Path(__file__).parent / "fixtures"


class TestRouge:
    def test_identical_sentences(self):
        assert rouge_score("The cat sat.", "The cat sat.").f1 == pytest.approx(1.0)

    def test_disjoint_sentences(self):
        assert rouge_score("alpha beta", "gamma delta").f1 == pytest.approx(0.0)

    def test_hand_lcs_case(self):
        # candidate "a b c d" vs reference "a c d": LCS 3
        scores = rouge_score("a b c d", "a c d")
        assert scores.recall == pytest.approx(1.0)
        assert scores.precision == pytest.approx(0.75)
        assert scores.f1 == pytest.approx(6 / 7, abs=1e-9)

    def test_empty_after_tokenization(self):
        with pytest.raises(UsageError):
            rouge_score("...", "words here")

    def test_unigram_variant(self):
        scores = rouge_score("a b c", "a c d", variant="rouge1")
        assert scores.precision == pytest.approx(2 / 3)
        assert scores.recall == pytest.approx(2 / 3)

    def test_bigram_variant(self):
        assert rouge_score("a b c", "a b c", variant="rouge2").f1 == pytest.approx(1.0)
        assert rouge_score("a b c", "c b a", variant="rouge2").f1 == pytest.approx(0.0)

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.sampled_from("abcde"), min_size=1, max_size=8),
        st.lists(st.sampled_from("abcde"), min_size=1, max_size=8),
    )
    def test_property_f1_in_unit_interval(self, cand, ref):
        scores = rouge_score(" ".join(cand), " ".join(ref))
        assert 0.0 <= scores.f1 <= 1.0


class TestMatchSentence:
    SENTS = [
        "The quick brown fox jumps.",
        "A different sentence entirely here.",
        "Results show strong improvement overall.",
        "The exact target sentence lives here.",
        "Another filler sentence for padding.",
    ]

    def test_exact_match_wins(self):
        result = match_sentence("The exact target sentence lives here.", self.SENTS)
        assert result.index == 3
        assert result.f1 == pytest.approx(1.0)
        assert not result.low_confidence

    def test_disjoint_flags_low_confidence(self):
        result = match_sentence("zzz qqq www", self.SENTS)
        assert result.index == 0
        assert result.f1 == pytest.approx(0.0)
        assert result.low_confidence

    def test_matches_brute_force_max(self):
        paraphrase = "strong results show improvement"
        result = match_sentence(paraphrase, self.SENTS)
        best = max(
            range(len(self.SENTS)),
            key=lambda i: rouge_score(self.SENTS[i], paraphrase).f1,
        )
        assert result.index == best
        assert result.f1 == pytest.approx(rouge_score(self.SENTS[best], paraphrase).f1)

    def test_empty_list_rejected(self):
        with pytest.raises(UsageError):
            match_sentence("anything", [])

    @settings(max_examples=40, deadline=None)
    @given(
        paraphrase=st.lists(st.sampled_from("abcdef"), min_size=1, max_size=6),
        sentences=st.lists(
            st.lists(st.sampled_from("abcdef"), min_size=1, max_size=6),
            min_size=1,
            max_size=6,
        ),
    )
    def test_property_index_in_bounds_and_score_in_unit_interval(self, paraphrase, sentences):
        result = match_sentence(" ".join(paraphrase), [" ".join(s) for s in sentences])
        assert 0 <= result.index < len(sentences)
        assert 0.0 <= result.f1 <= 1.0


class TestTruncatePress:
    def test_long_body_keeps_five_sentences(self):
        body = [f"s{i}." for i in range(10)]
        kept = truncate_press("Title.", "Lead.", body)
        assert kept == ["Title.", "Lead.", "s0.", "s1.", "s2."]

    def test_short_body(self):
        assert truncate_press("Title.", "Lead.", ["only."]) == ["Title.", "Lead.", "only."]

    def test_missing_lead_degrades(self):
        kept = truncate_press("Title.", None, ["a.", "b.", "c.", "d."])
        assert kept == ["Title.", "a.", "b.", "c."]

    def test_missing_title_is_data_error(self):
        with pytest.raises(DataError):
            truncate_press("", "Lead.", ["a."])


class Record:
    def __init__(self, rid, label):
        self.rid = rid
        self.label = label


class TestStratifiedSample:
    def records(self, counts):
        out = []
        for label, n in counts.items():
            out.extend(Record(f"{label}{i}", label) for i in range(n))
        return out

    def test_even_split(self):
        sample = stratified_sample(self.records({0: 50, 1: 50}), 10, seed=1)
        labels = [r.label for r in sample]
        assert labels.count(0) == 5 and labels.count(1) == 5

    def test_same_seed_same_ids(self):
        records = self.records({0: 30, 1: 20, 2: 10})
        first = {r.rid for r in stratified_sample(records, 12, seed=9)}
        second = {r.rid for r in stratified_sample(records, 12, seed=9)}
        assert first == second

    def test_largest_remainder_case(self):
        sample = stratified_sample(self.records({0: 70, 1: 20, 2: 10}), 10, seed=3)
        labels = [r.label for r in sample]
        assert (labels.count(0), labels.count(1), labels.count(2)) == (7, 2, 1)

    def test_oversized_request_rejected(self):
        with pytest.raises(UsageError):
            stratified_sample(self.records({0: 3}), 4, seed=0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 25))
    def test_property_sample_size(self, n):
        records = self.records({0: 15, 1: 10})
        assert len(stratified_sample(records, n, seed=5)) == n


class FakeTransport:
    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = []

    def get(self, url, headers=None):
        self.calls.append((url, dict(headers or {})))
        return self.responses.pop(0)


class TestFetchAbstract:
    DOI = "10.1234/example.doi"

    def test_success(self):
        transport = FakeTransport([TransportResponse(200, '{"abstract": "X"}')])
        sleeps = []
        assert fetch_abstract(self.DOI, transport, base_url="http://b", sleep=sleeps.append) == "X"
        url, headers = transport.calls[0]
        assert url == f"http://b/paper/{self.DOI}?fields=abstract"

    def test_null_abstract_is_absent(self):
        transport = FakeTransport([TransportResponse(200, '{"abstract": null}')])
        assert fetch_abstract(self.DOI, transport, base_url="http://b") is None

    def test_404_is_absent(self):
        transport = FakeTransport([TransportResponse(404, "")])
        assert fetch_abstract(self.DOI, transport, base_url="http://b") is None

    def test_retry_three_429s_then_success(self):
        transport = FakeTransport(
            [TransportResponse(429, "")] * 3 + [TransportResponse(200, '{"abstract": "Y"}')]
        )
        sleeps = []
        result = fetch_abstract(self.DOI, transport, base_url="http://b", sleep=sleeps.append)
        assert result == "Y"
        assert sleeps == [1.0, 2.0, 4.0]
        assert len(transport.calls) == 4

    def test_rate_limit_error_after_budget(self):
        transport = FakeTransport([TransportResponse(429, "")] * 5)
        with pytest.raises(RateLimitError):
            fetch_abstract(self.DOI, transport, base_url="http://b", sleep=lambda s: None)
        assert len(transport.calls) == 5

    def test_malformed_body(self):
        transport = FakeTransport([TransportResponse(200, "{broken")])
        with pytest.raises(DataError):
            fetch_abstract(self.DOI, transport, base_url="http://b")

    def test_invalid_doi(self):
        with pytest.raises(UsageError):
            fetch_abstract("not-a-doi", FakeTransport([]))

    def test_api_key_header(self):
        transport = FakeTransport([TransportResponse(200, '{"abstract": "X"}')])
        fetch_abstract(self.DOI, transport, base_url="http://b", api_key="secret")
        assert transport.calls[0][1] == {"x-api-key": "secret"}

    def test_bulk_fetch_with_worker_pool(self):
        from exagpet.data import fetch_abstracts

        class ByUrlTransport:
            def get(self, url, headers=None):
                doi = url.split("/paper/")[1].split("?")[0]
                return TransportResponse(200, json.dumps({"abstract": f"text for {doi}"}))

        dois = [f"10.1234/paper{i}" for i in range(6)]
        serial = fetch_abstracts(dois, ByUrlTransport(), jobs=1, base_url="http://b")
        pooled = fetch_abstracts(dois, ByUrlTransport(), jobs=3, base_url="http://b")
        assert serial == pooled
        assert serial["10.1234/paper2"] == "text for 10.1234/paper2"


class TestBuildGold:
    def build(self, tmp_path, train_size=5, **kwargs):
        return build_gold(
            FIXTURES / "gold_annotations.jsonl",
            FIXTURES / "gold_abstracts.jsonl",
            FIXTURES / "gold_press.jsonl",
            tmp_path / "gold",
            seed=13,
            train_size=train_size,
            **kwargs,
        )

    def test_fixture_counts(self, tmp_path):
        build = self.build(tmp_path)
        assert build.manifest.total_pairs == 17
        assert build.manifest.label_counts == {0: 4, 1: 8, 2: 5}
        assert build.manifest.splits["train"]["size"] == 5
        assert build.manifest.splits["test"]["size"] == 12
        assert build.manifest.conclusion_sentences == 40  # 5 pairs x (5 + 3)
        assert build.manifest.strength_sentences == 34
        assert len(build.manifest.skipped) == 3
        assert {row["id"] for row in build.manifest.skipped} == {"g05", "g11", "g17"}

    def test_alignment_review_sidecar(self, tmp_path):
        self.build(tmp_path)
        rows = [
            json.loads(line)
            for line in (tmp_path / "gold" / "review.jsonl").read_text().splitlines()
        ]
        assert len(rows) == 1
        assert rows[0]["id"] == "g18" and rows[0]["side"] == "press"

    def test_labels_consistent_with_derivation(self, tmp_path):
        build = self.build(tmp_path)
        for pair in build.pairs:
            assert pair.exaggeration_label == int(
                derive_exaggeration(pair.press_strength, pair.abstract_strength)
            )

    def test_alignment_picks_exact_sentences(self, tmp_path):
        build = self.build(tmp_path)
        by_id = {p.pair_id: p for p in build.pairs}
        assert by_id["g01"].press_sentence == "Press body g01 sentence 1 about results."
        assert by_id["g01"].abstract_sentence == "Abstract g01 sentence 1 describing findings."

    def test_idempotent_byte_identical(self, tmp_path):
        self.build(tmp_path)
        first = {
            p.name: sha256_file(p) for p in sorted((tmp_path / "gold").iterdir())
        }
        self.build(tmp_path)
        second = {
            p.name: sha256_file(p) for p in sorted((tmp_path / "gold").iterdir())
        }
        assert first == second

    def test_counts_sum_across_splits(self, tmp_path):
        build = self.build(tmp_path)
        for label, count in build.manifest.label_counts.items():
            split_sum = sum(
                build.manifest.splits[name]["label_counts"].get(str(label), 0)
                for name in ("train", "test")
            )
            assert split_sum == count

    def test_output_files_load_back(self, tmp_path):
        self.build(tmp_path)
        gold = tmp_path / "gold"
        pairs = load_sentence_pairs(gold / "gold_pairs.jsonl")
        assert len(pairs) == 17
        conclusions = load_conclusion_records(gold / "conclusions.jsonl")
        assert sum(c.is_conclusion for c in conclusions) == 10  # 2 per train pair
        strengths = load_strength_records(gold / "strength_sentences.jsonl")
        assert {s.source for s in strengths} == {"press", "abstract"}

    def test_train_size_must_leave_a_test_set(self, tmp_path):
        with pytest.raises(UsageError):
            self.build(tmp_path, train_size=17)

    def test_records_with_broken_documents_are_skipped_not_fatal(self, tmp_path):
        from exagpet.data import read_jsonl, write_jsonl

        annotations = read_jsonl(FIXTURES / "gold_annotations.jsonl")
        press = read_jsonl(FIXTURES / "gold_press.jsonl")
        # empty title on one record, empty conclusion paraphrase on another
        press[0]["title"] = "   "
        annotations[1]["abstract_conclusion"] = "..."
        write_jsonl(tmp_path / "annotations.jsonl", annotations)
        write_jsonl(tmp_path / "press.jsonl", press)
        build = build_gold(
            tmp_path / "annotations.jsonl",
            FIXTURES / "gold_abstracts.jsonl",
            tmp_path / "press.jsonl",
            tmp_path / "gold",
            seed=13,
            train_size=5,
        )
        reasons = {row["id"]: row["reason"] for row in build.manifest.skipped}
        assert "no title" in reasons["g01"]
        assert "alignment failed" in reasons["g02"]
        assert build.manifest.total_pairs == 15


class TestUnlabeledIngestion:
    def test_fixture_skips_bad_rows(self):
        pairs, skipped = load_unlabeled_pairs(FIXTURES / "unlabeled_pairs.jsonl")
        assert len(pairs) == 4
        assert {row["id"] for row in skipped} == {"u-missing-title", "u-no-doi"}

    def test_truncation_applied(self):
        pairs, _ = load_unlabeled_pairs(FIXTURES / "unlabeled_pairs.jsonl")
        sentences = pairs[0].press_sentences()
        assert len(sentences) == 5  # title + lead + 3 body sentences


class TestSentenceSplitting:
    def test_splits_on_terminators(self):
        text = "First sentence. Second one! Third here? Done."
        assert split_sentences(text) == [
            "First sentence.",
            "Second one!",
            "Third here?",
            "Done.",
        ]


class TestRoundTrips:
    def test_sentence_pair_round_trip(self, tmp_path):
        pairs = [
            SentencePair("a", "press text.", "abstract text.", 3, 1, 2),
            SentencePair("b", "more press.", "more abstract.", 1, 1, 1),
        ]
        path = tmp_path / "pairs.jsonl"
        save_sentence_pairs(pairs, path)
        assert load_sentence_pairs(path) == pairs
        row = json.loads(path.read_text().splitlines()[0])
        assert set(row) == {
            "id",
            "press_sentence",
            "abstract_sentence",
            "press_strength",
            "abstract_strength",
            "exaggeration_label",
        }
