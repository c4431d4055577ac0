"""Corpus construction walkthrough on the bundled fixture.

Maps six-level strength annotations to the four-level scheme, aligns
conclusion paraphrases by ROUGE, derives exaggeration labels, splits
train/test, and prints the manifest, plus small detours through the
alignment and sampling primitives.

Run:  python demos/03_data_curation.py
"""

import tempfile
from pathlib import Path

from exagpet.data import build_gold, match_sentence, rouge_score, stratified_sample
from exagpet.evaluation import transition_error_bins

FIXTURES = Path(__file__).parent.parent / "tests" / "fixtures"

print("=== ROUGE-L alignment primitive ===")
scores = rouge_score("a b c d", "a c d")
print(f"candidate 'a b c d' vs reference 'a c d': "
      f"R {scores.recall:.3f}  P {scores.precision:.3f}  F1 {scores.f1:.4f}")

sentences = [
    "The study followed 2,000 participants.",
    "Coffee drinkers showed lower risk of heart disease.",
    "Funding came from the national health council.",
]
match = match_sentence("lower heart disease risk among coffee drinkers", sentences)
print(f"best match: index {match.index} (F1 {match.f1:.3f}) -> {sentences[match.index]!r}")

print("\n=== Building the gold corpus from an annotation export ===")
with tempfile.TemporaryDirectory() as tmp:
    build = build_gold(
        FIXTURES / "gold_annotations.jsonl",
        FIXTURES / "gold_abstracts.jsonl",
        FIXTURES / "gold_press.jsonl",
        Path(tmp) / "gold",
        seed=13,
        train_size=5,
    )
    print(build.manifest.summary())
    print("skipped records:", [row["id"] for row in build.manifest.skipped])
    print("output files:", sorted(build.manifest.output_digests))

    print("\n=== Stratified sampling ===")
    sample = stratified_sample(
        build.pairs, 8, seed=3, label_of=lambda p: p.exaggeration_label
    )
    counts = {}
    for pair in sample:
        counts[pair.exaggeration_label] = counts.get(pair.exaggeration_label, 0) + 1
    print(f"8 of {len(build.pairs)} pairs, per-label: {dict(sorted(counts.items()))}")

    print("\n=== Error binning by strength transition ===")
    predictions = [1] * len(build.pairs)  # a majority-class strawman
    for bin_ in transition_error_bins(build.pairs, predictions):
        print(f"  {bin_.key:>10}: {bin_.wrong}/{bin_.count} wrong")
