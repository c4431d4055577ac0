"""End-to-end command-line behavior, exit codes, and determinism."""

import json
from pathlib import Path

import pytest

from exagpet.cli import main
from exagpet.data import (
    save_sentence_pairs,
    save_strength_records,
    sha256_file,
    write_jsonl,
)
from exagpet.synthetic import (
    CONCLUSION_MARKER,
    make_pair_corpus,
    make_strength_records,
    oracle_backend_factory,
    write_mock_table,
)

FIXTURES = Path(__file__).parent / "fixtures"

# mock-scale hyperparameter overrides (config defaults are encoder-scale)
FAST_HP = [
    "--set", "epochs=2",
    "--set", "learning_rate=0.05",
    "--set", "warmup_steps=0",
    "--set", "weight_decay=0.0",
    "--set", "distill_epochs=15",
    "--set", "distill_learning_rate=0.2",
    "--set", "distill_warmup_steps=0",
    "--set", "distill_weight_decay=0.0",
]


def run_cli(argv):
    try:
        return main(argv)
    except SystemExit as exc:  # argparse usage failures
        return int(exc.code)


def write_config(path: Path, **values) -> Path:
    lines = ["# test config"] + [f"{k} = {v}" for k, v in values.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def t1_workspace(tmp_path):
    """Mock table, t1 data files, and a ready config for training commands."""
    table = tmp_path / "mock_table.json"
    write_mock_table(table, feature_dim=512)
    train = make_pair_corpus(16)
    corpus = make_pair_corpus(32, start=200)
    save_sentence_pairs(train, tmp_path / "train.jsonl")
    save_sentence_pairs(corpus, tmp_path / "test.jsonl")
    unlabeled = [
        {"id": p.pair_id, "press_sentence": p.press_sentence, "abstract_sentence": p.abstract_sentence}
        for p in corpus
    ]
    write_jsonl(tmp_path / "unlabeled.jsonl", unlabeled)
    save_strength_records(make_strength_records(16), tmp_path / "aux.jsonl")
    config = write_config(
        tmp_path / "run.cfg",
        main_task="t1",
        aux_task="t2",
        train_file=tmp_path / "train.jsonl",
        aux_file=tmp_path / "aux.jsonl",
        unlabeled_file=tmp_path / "unlabeled.jsonl",
        test_file=tmp_path / "test.jsonl",
        output_dir=tmp_path / "out",
        backend="mock",
        mock_table=table,
        seeds="1,2",
    )
    return tmp_path, config


class TestTrain:
    def test_mtpet_oracle_reaches_perfect_f1(self, t1_workspace, capsys):
        tmp_path, config = t1_workspace
        code = run_cli(["train", "mtpet", "--config", str(config)] + FAST_HP)
        assert code == 0
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["mean"]["f1"] == pytest.approx(1.0)
        assert len(report["members"]) == 2

    def test_report_lists_one_entry_per_seed(self, t1_workspace):
        tmp_path, config = t1_workspace
        code = run_cli(
            ["train", "pet", "--config", str(config), "--seed", "5", "--seed", "6", "--seed", "7"]
            + FAST_HP
        )
        assert code == 0
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert [row["seed"] for row in report["seeds"]] == [5, 6, 7]

    def test_deterministic_given_config_and_seeds(self, t1_workspace):
        tmp_path, config = t1_workspace
        digests = []
        for _ in range(2):
            assert run_cli(["train", "mtpet", "--config", str(config)] + FAST_HP) == 0
            digests.append(sha256_file(tmp_path / "out" / "report.json"))
        assert digests[0] == digests[1]

    def test_supervised_warns_about_pvp_settings(self, t1_workspace, tmp_path, capsys):
        base, config = t1_workspace
        from exagpet.pvp import registry, save_pvps

        pvp_file = base / "pvps.json"
        save_pvps(registry().all(), pvp_file)
        code = run_cli(
            [
                "train", "supervised", "--config", str(config),
                "--set", f"pvp_file={pvp_file}",
                "--set", "epochs=12", "--set", "learning_rate=0.2",
                "--set", "warmup_steps=0", "--set", "weight_decay=0.0",
            ]
        )
        captured = capsys.readouterr()
        assert code == 0
        assert "ignores PVP settings" in captured.err

    def test_invalid_mode_exits_2(self, t1_workspace):
        _, config = t1_workspace
        assert run_cli(["train", "bogus", "--config", str(config)]) == 2

    def test_missing_input_path_exits_2_naming_it(self, t1_workspace, capsys):
        tmp_path, config = t1_workspace
        code = run_cli(
            ["train", "pet", "--config", str(config), "--set", "train_file=/nope/missing.jsonl"]
        )
        captured = capsys.readouterr()
        assert code == 2
        assert "missing.jsonl" in captured.err

    def test_out_of_space_label_exits_3(self, t1_workspace):
        tmp_path, config = t1_workspace
        rows = json.loads(json.dumps([
            {
                "id": "bad", "press_sentence": "p.", "abstract_sentence": "a.",
                "press_strength": 1, "abstract_strength": 1, "exaggeration_label": 7,
            }
        ]))
        write_jsonl(tmp_path / "bad_train.jsonl", rows)
        code = run_cli(
            ["train", "pet", "--config", str(config), "--set", f"train_file={tmp_path}/bad_train.jsonl"]
            + FAST_HP
        )
        assert code == 3

    def test_unknown_config_key_exits_2(self, t1_workspace):
        _, config = t1_workspace
        assert run_cli(["train", "pet", "--config", str(config), "--set", "nonsense=1"]) == 2

    def test_nonfinite_scores_exit_4(self, t1_workspace):
        tmp_path, config = t1_workspace
        table = json.loads((tmp_path / "mock_table.json").read_text())
        # 1e999 parses to infinity and poisons every loss computation
        table["entries"].append({"pattern": "Trial", "token": "mistaken", "score": 1e999})
        (tmp_path / "poisoned_table.json").write_text(json.dumps(table))
        code = run_cli(
            ["train", "pet", "--config", str(config), "--mock-table", str(tmp_path / "poisoned_table.json")]
            + FAST_HP
        )
        assert code == 4

    def test_mode_falls_back_to_config_key(self, t1_workspace):
        tmp_path, config = t1_workspace
        code = run_cli(
            ["train", "--config", str(config), "--set", "mode=pet", "--seed", "4"] + FAST_HP
        )
        assert code == 0
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert [row["seed"] for row in report["seeds"]] == [4]

    def test_user_supplied_pvp_file(self, t1_workspace):
        tmp_path, config = t1_workspace
        from exagpet.pvp import registry, save_pvps

        pvp_file = tmp_path / "custom_pvps.json"
        save_pvps(registry().all(), pvp_file)
        code = run_cli(
            ["train", "pet", "--config", str(config), "--set", f"pvp_file={pvp_file}"]
            + FAST_HP
        )
        assert code == 0
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["mean"]["f1"] == pytest.approx(1.0)


class TestPrepareData:
    def make_config(self, tmp_path):
        return write_config(
            tmp_path / "prep.cfg",
            annotations_file=FIXTURES / "gold_annotations.jsonl",
            abstracts_file=FIXTURES / "gold_abstracts.jsonl",
            press_file=FIXTURES / "gold_press.jsonl",
            unlabeled_raw_file=FIXTURES / "unlabeled_pairs.jsonl",
            output_dir=tmp_path / "out",
            train_split_size="5",
        )

    def test_builds_and_prints_manifest_summary(self, tmp_path, capsys):
        config = self.make_config(tmp_path)
        assert run_cli(["prepare-data", "--config", str(config)]) == 0
        out = capsys.readouterr().out
        assert "17 pairs" in out
        assert (tmp_path / "out" / "gold" / "manifest.json").exists()
        assert (tmp_path / "out" / "unlabeled.jsonl").exists()

    def test_rerun_is_byte_identical(self, tmp_path):
        config = self.make_config(tmp_path)
        assert run_cli(["prepare-data", "--config", str(config)]) == 0
        gold = tmp_path / "out" / "gold"
        before = {p.name: sha256_file(p) for p in sorted(gold.iterdir())}
        assert run_cli(["prepare-data", "--config", str(config)]) == 0
        after = {p.name: sha256_file(p) for p in sorted(gold.iterdir())}
        assert before == after

    def test_missing_annotations_exits_2(self, tmp_path, capsys):
        config = self.make_config(tmp_path)
        code = run_cli(
            ["prepare-data", "--config", str(config), "--set", "annotations_file=/gone.jsonl"]
        )
        assert code == 2
        assert "/gone.jsonl" in capsys.readouterr().err


class TestDetectConclusions:
    def setup_workspace(self, tmp_path):
        checkpoint = tmp_path / "conclusion_model"
        oracle_backend_factory(feature_dim=64)().save_checkpoint(checkpoint)
        rows = []
        for i in range(3):
            rows.append(
                {
                    "id": f"u{i}",
                    "doi": f"10.1000/u{i}",
                    "press_title": f"Title {i}.",
                    "press_lead": f"Lead {i}.",
                    "press_body": [
                        f"Body {i} zero.",
                        f"Overall the {CONCLUSION_MARKER} of study {i} stands.",
                        f"Body {i} two.",
                    ],
                    "abstract_sentences": [
                        f"Abstract {i} zero.",
                        f"Overall the {CONCLUSION_MARKER} of abstract {i} stands.",
                        f"Abstract {i} two.",
                    ],
                }
            )
        write_jsonl(tmp_path / "unlabeled_raw.jsonl", rows)
        return write_config(
            tmp_path / "detect.cfg",
            conclusion_model=checkpoint,
            unlabeled_raw_file=tmp_path / "unlabeled_raw.jsonl",
            output_dir=tmp_path / "out",
        )

    def test_selections_match_oracle_markers(self, tmp_path):
        config = self.setup_workspace(tmp_path)
        assert run_cli(["detect-conclusions", "--config", str(config)]) == 0
        rows = [
            json.loads(line)
            for line in (tmp_path / "out" / "conclusions_detected.jsonl").read_text().splitlines()
        ]
        assert len(rows) == 6  # two sides per pair
        press_rows = [r for r in rows if r["side"] == "press"]
        abstract_rows = [r for r in rows if r["side"] == "abstract"]
        # press sentences are [title, lead, body...]: marker sits at index 3
        assert all(r["index"] == 3 for r in press_rows)
        assert all(r["index"] == 1 for r in abstract_rows)

    def test_empty_unlabeled_exits_2(self, tmp_path):
        config = self.setup_workspace(tmp_path)
        (tmp_path / "unlabeled_raw.jsonl").write_text("")
        assert run_cli(["detect-conclusions", "--config", str(config)]) == 2

    def test_missing_model_exits_2(self, tmp_path):
        config = self.setup_workspace(tmp_path)
        assert (
            run_cli(
                ["detect-conclusions", "--config", str(config), "--set", "conclusion_model=/gone"]
            )
            == 2
        )


class TestEvaluate:
    def setup_files(self, tmp_path, perfect=True):
        pairs = make_pair_corpus(12)
        save_sentence_pairs(pairs, tmp_path / "gold.jsonl")
        predictions = [
            {"id": p.pair_id, "label": p.exaggeration_label if perfect else 1} for p in pairs
        ]
        write_jsonl(tmp_path / "preds.jsonl", predictions)
        config = write_config(tmp_path / "eval.cfg", output_dir=tmp_path / "out")
        return config

    def test_perfect_predictions(self, tmp_path, capsys):
        config = self.setup_files(tmp_path)
        code = run_cli(
            [
                "evaluate", "--config", str(config),
                "--predictions", str(tmp_path / "preds.jsonl"),
                "--gold", str(tmp_path / "gold.jsonl"),
            ]
        )
        assert code == 0
        assert "macro F1 1.0000" in capsys.readouterr().out
        assert (tmp_path / "out" / "eval_report.json").exists()
        assert (tmp_path / "out" / "eval_report.txt").exists()

    def test_mismatched_ids_exit_2_naming_first(self, tmp_path, capsys):
        config = self.setup_files(tmp_path)
        rows = [{"id": "ghost", "label": 1}] + [
            {"id": f"pair{i:03d}", "label": 1} for i in range(1, 12)
        ]
        write_jsonl(tmp_path / "preds.jsonl", rows)
        code = run_cli(
            [
                "evaluate", "--config", str(config),
                "--predictions", str(tmp_path / "preds.jsonl"),
                "--gold", str(tmp_path / "gold.jsonl"),
            ]
        )
        assert code == 2
        assert "ghost" in capsys.readouterr().err

    def test_transitions_flag(self, tmp_path, capsys):
        config = self.setup_files(tmp_path)
        code = run_cli(
            [
                "evaluate", "--config", str(config),
                "--predictions", str(tmp_path / "preds.jsonl"),
                "--gold", str(tmp_path / "gold.jsonl"),
                "--transitions",
            ]
        )
        assert code == 0
        assert (tmp_path / "out" / "transitions.jsonl").exists()

    def test_transitions_without_strengths_exits_2(self, tmp_path):
        config = self.setup_files(tmp_path)
        bare_gold = [{"id": f"pair{i:03d}", "label": 1} for i in range(12)]
        write_jsonl(tmp_path / "bare_gold.jsonl", bare_gold)
        preds = [{"id": f"pair{i:03d}", "label": 1} for i in range(12)]
        write_jsonl(tmp_path / "preds2.jsonl", preds)
        code = run_cli(
            [
                "evaluate", "--config", str(config),
                "--predictions", str(tmp_path / "preds2.jsonl"),
                "--gold", str(tmp_path / "bare_gold.jsonl"),
                "--transitions",
            ]
        )
        assert code == 2


class TestLearningCurve:
    def test_supervised_curve(self, t1_workspace, tmp_path, capsys):
        base, config = t1_workspace
        code = run_cli(
            [
                "learning-curve", "--config", str(config),
                "--set", "curve_sizes=8,16",
                "--set", "curve_mode=supervised",
                "--set", "epochs=6", "--set", "learning_rate=0.2",
                "--set", "warmup_steps=0", "--set", "weight_decay=0.0",
                "--seed", "1", "--seed", "2",
            ]
        )
        assert code == 0
        csv_lines = (base / "out" / "learning_curve.csv").read_text().splitlines()
        assert csv_lines[0] == "size,seed,f1"
        assert len(csv_lines) == 1 + 2 * 2  # sizes x seeds

    def test_requires_sizes(self, t1_workspace):
        _, config = t1_workspace
        assert run_cli(["learning-curve", "--config", str(config)]) == 2
