"""Tour of patterns, verbalizers, and cloze scoring.

Renders the built-in templates, scores a sentence with a table-driven
mock backend, and runs the margin-based verbalizer search.

Run:  python demos/01_patterns_and_scoring.py
"""

from exagpet import MockBackend, TableEntry, Vocabulary, label_distribution, registry
from exagpet.pet import PvpModel, TaskInstance, label_score
from exagpet.pvp import Pattern, search_verbalizers

reg = registry()

print("=== Built-in patterns ===")
for pvp in reg.all():
    print(f"{pvp.task}[{pvp.index}]  {pvp.pattern.template}")

print("\n=== Rendering a strength pattern for both roles ===")
sentence = "Drinking coffee may be linked to lower cancer risk"
for role in ("press", "abstract"):
    seq = reg.t2[0].pattern.apply(sentence, role=role)
    print(f"{role:>8}: {seq.text}")

print("\n=== Scoring labels through the masked slot ===")
# an oracle table: the word "linked" should read as a correlational claim
vocab_tokens = tuple(dict.fromkeys(reg.t2[0].verbalizer.all_tokens())) + ("[MASK]",)
backend = MockBackend(
    Vocabulary(vocab_tokens, "[MASK]"),
    table=[TableEntry("linked", tok, 4.0) for tok in reg.t2[0].verbalizer.tokens(1)],
)
model = PvpModel.from_pvp(backend, reg.t2[0], labels=(0, 1, 2, 3))
scores = label_score(model, TaskInstance(a=sentence, role="press"))
print("raw label scores:", {k: round(v, 3) for k, v in scores.items()})
print("distribution:    ", {k: round(v, 3) for k, v in label_distribution(scores).items()})

print("\n=== Automatic verbalizer search (margin ranking) ===")
candidates = ["definite", "tentative", "royal", "plain"]
search_vocab = Vocabulary(tuple(candidates) + ("[MASK]",), "[MASK]")
search_backend = MockBackend(
    search_vocab,
    table=[
        TableEntry("causes", "definite", 5.0),
        TableEntry("might", "tentative", 5.0),
    ],
)
labeled = [
    ("smoking causes cancer", 3),
    ("the drug causes recovery", 3),
    ("tea might help sleep", 1),
    ("naps might aid recall", 1),
]
found = search_verbalizers(
    Pattern("claim: {a} [MASK]"), labeled, search_backend, k=2, label_space=[1, 3],
    candidates=candidates,
)
for label, tokens in found.items():
    print(f"label {label}: {tokens}")
