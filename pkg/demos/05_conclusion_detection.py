"""Finding the conclusion sentence of a document.

Trains a single-task pattern ensemble for conclusion detection on a
synthetic seed set, then picks the conclusion sentence from unseen
documents by the maximum "Conclusion" cloze score, and round-trips the
model through a checkpoint.

Run:  python demos/05_conclusion_detection.py
"""

import tempfile
from dataclasses import replace
from pathlib import Path

from exagpet import PipelineConfig, TaskSpec, load_checkpoint, run_pet
from exagpet.pet import DistillConfig, PvpModel, TrainConfig
from exagpet.pvp import make_tuples, registry
from exagpet.synthetic import (
    CONCLUSION_MARKER,
    make_conclusion_records,
    oracle_backend_factory,
    student_backend_factory,
)
from exagpet.tasks import CONCLUSION_LABELS, conclusion_instances, detect_conclusion

reg = registry()
print(f"{len(reg.conclusion)} conclusion-detection patterns:")
for pvp in reg.conclusion:
    print(f"  {pvp.pattern.template}")

seed_data = conclusion_instances(make_conclusion_records(24))
spec = TaskSpec(
    main_task="conclusion",
    train=seed_data,
    unlabeled=[replace(i, label=None) for i in conclusion_instances(make_conclusion_records(30, start=50))],
    tuples=list(make_tuples(reg.conclusion, reg.conclusion)),
    main_labels=tuple(CONCLUSION_LABELS),
    test=conclusion_instances(make_conclusion_records(20, start=100)),
)
config = PipelineConfig(
    train=TrainConfig(epochs=2, batch_size=4, learning_rate=0.05, warmup_steps=0, weight_decay=0.0),
    distill=DistillConfig(epochs=10, batch_size=4, learning_rate=0.2, warmup_steps=0, weight_decay=0.0),
)
outcome = run_pet(
    spec,
    seeds=[1],
    backend_factory=oracle_backend_factory(feature_dim=256),
    student_factory=student_backend_factory(num_labels=2, feature_dim=256),
    config=config,
)
print(f"\n{len(outcome.report.members)} members trained; test macro F1 {outcome.report.mean['f1']:.3f}")

# checkpoint round trip, then sentence selection on an unseen document
with tempfile.TemporaryDirectory() as tmp:
    backend = oracle_backend_factory(feature_dim=256)()
    backend.save_checkpoint(Path(tmp) / "conclusion_model")
    restored = load_checkpoint(Path(tmp) / "conclusion_model")
    model = PvpModel.from_pvp(restored, reg.conclusion[0], CONCLUSION_LABELS)
    document = [
        "The trial enrolled four hundred adults.",
        "Methods followed the registered protocol.",
        f"Overall the {CONCLUSION_MARKER} of the trial stands.",
        "Funding sources are listed in the appendix.",
    ]
    index, sentence, score = detect_conclusion(document, model)
    print(f"\nconclusion sentence: index {index} (score {score:.1f})")
    print(f"  {sentence!r}")
