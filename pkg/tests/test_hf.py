"""Optional real-backend tests (need the [hf] extra plus a cached encoder).

Enabled with EXAGPET_HF_TESTS=1; everything gating runs on the mock.
"""

import os

import pytest

requires_hf = pytest.mark.skipif(
    not os.environ.get("EXAGPET_HF_TESTS"),
    reason="set EXAGPET_HF_TESTS=1 (with the [hf] extra and a cached encoder) to run",
)


def test_missing_extras_error_is_actionable():
    # a no-op when torch/transformers are importable; otherwise it must
    # raise a ConfigurationError pointing at the extra
    from exagpet.errors import ConfigurationError
    from exagpet.hf import _require_torch

    try:
        _require_torch()
    except ConfigurationError as exc:
        assert "exagpet[hf]" in str(exc)


@requires_hf
class TestRealBackend:
    @pytest.fixture(scope="class")
    def backend(self):
        from exagpet.hf import HuggingFaceBackend

        return HuggingFaceBackend("roberta-base")

    def test_score_masked_is_deterministic(self, backend):
        from exagpet.backend import MaskedSequence

        seq = MaskedSequence(
            "Reporters say coffee prevents cancer. The claim strength is <mask>",
            mask_token="<mask>",
        )
        first = backend.score_masked(seq, ["proven", "estimated"])
        second = backend.score_masked(seq, ["proven", "estimated"])
        assert first == second

    def test_checkpoint_round_trip(self, backend, tmp_path):
        from exagpet.backend import MaskedSequence, load_checkpoint

        backend.save_checkpoint(tmp_path / "ckpt")
        restored = load_checkpoint(tmp_path / "ckpt")
        seq = MaskedSequence("The outcome is <mask>", mask_token="<mask>")
        a = backend.score_masked(seq, ["proven"])
        b = restored.score_masked(seq, ["proven"])
        assert a["proven"] == pytest.approx(b["proven"], abs=1e-4)

    def test_fine_tune_step_runs(self, backend):
        from exagpet.backend import LossSpec, MaskedSequence, OptimizerConfig, TrainExample

        backend.train()
        backend.configure_optimizer(OptimizerConfig(learning_rate=1e-5, warmup_steps=1))
        seq = MaskedSequence("The result is <mask>", mask_token="<mask>")
        loss = backend.fine_tune_batch(
            [TrainExample(seq, {"proven": 1.0, "estimated": 0.0})], LossSpec()
        )
        backend.eval()
        assert loss > 0
