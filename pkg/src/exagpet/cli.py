"""Command-line surface: prepare-data, train, detect-conclusions,
evaluate, and learning-curve, all driven by a single flat config file.

Config files hold one ``key = value`` pair per line (``#`` comments);
any key can be overridden with ``--set key=value``. Exit codes are a
stable contract: 0 success, 2 usage/config, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import data as data_mod
from .backend import Backend, MockBackend
from .errors import (
    ConfigurationError,
    DataError,
    ExagPetError,
    NumericalFailureError,
    StageError,
    UsageError,
)
from .evaluation import (
    learning_curve,
    macro_prf,
    transition_error_bins,
    write_curve_csv,
)
from .multitask import PipelineConfig, RunOutcome, RunReport, SeedResult, TaskSpec, run_mtpet, run_pet
from .pet import (
    DistillConfig,
    PvpModel,
    TaskInstance,
    TrainConfig,
)
from .pvp import TASK_CONCLUSION, TASK_T1, TASK_T2, load_pvps, make_tuples, registry
from .tasks import (
    CONCLUSION_LABELS,
    EXAGGERATION_LABELS,
    STRENGTH_LABELS,
    conclusion_instances,
    t1_instances,
    t2_instances,
)

logger = logging.getLogger(__name__)

_TASK_LABELS = {
    TASK_T1: EXAGGERATION_LABELS,
    TASK_T2: STRENGTH_LABELS,
    TASK_CONCLUSION: CONCLUSION_LABELS,
}

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}

_CONFIG_KEYS = {
    # run identity
    "main_task": "t1",
    "aux_task": "",
    "mode": "pet",
    # data files
    "train_file": "",
    "aux_file": "",
    "unlabeled_file": "",
    "test_file": "",
    "pvp_file": "",
    "output_dir": "out",
    # backend
    "backend": "mock",
    "mock_table": "",
    "checkpoint": "roberta-base",
    # seeds / parallelism
    "seeds": "1,2,3,4,5",
    "jobs": "1",
    # pattern-training hyperparameters
    "epochs": "10",
    "batch_size": "4",
    "learning_rate": "",
    "warmup_steps": "50",
    "weight_decay": "0.001",
    "class_weighting": "true",
    # distillation hyperparameters
    "distill_epochs": "3",
    "distill_batch_size": "4",
    "distill_learning_rate": "0.00001",
    "distill_warmup_steps": "200",
    "distill_weight_decay": "0.01",
    "temperature": "2.0",
    # multi-task settings
    "alpha_main": "1.0",
    "alpha_aux": "",
    "aggregation": "mean",
    "normalize_weights": "false",
    "sampling": "uniform",
    # data preparation
    "annotations_file": "",
    "abstracts_file": "",
    "press_file": "",
    "unlabeled_raw_file": "",
    "split_seed": "13",
    "train_split_size": "100",
    "rouge_variant": "rougeL",
    "match_threshold": "0.3",
    # conclusion detection
    "conclusion_model": "",
    "conclusion_pattern_index": "0",
    "detections_file": "",
    # learning curve
    "curve_sizes": "",
    "curve_mode": "supervised",
}


def parse_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for i, raw in enumerate(path.read_text(encoding="utf-8").splitlines()):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{i + 1}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise UsageError(f"{path}:{i + 1}: unknown config key {key!r}")
        values[key] = value
    return values


@dataclass
class RunConfig:
    values: dict[str, str] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path, overrides: list[str] = ()) -> "RunConfig":
        values = dict(_CONFIG_KEYS)
        values.update(parse_config_file(path))
        for item in overrides or ():
            if "=" not in item:
                raise UsageError(f"--set expects key=value, got {item!r}")
            key, value = (part.strip() for part in item.split("=", 1))
            if key not in _CONFIG_KEYS:
                raise UsageError(f"--set: unknown config key {key!r}")
            values[key] = value
        return cls(values)

    def get(self, key: str) -> str:
        return self.values[key]

    def get_int(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError:
            raise UsageError(f"config {key} must be an integer, got {self.values[key]!r}") from None

    def get_float(self, key: str) -> float:
        try:
            return float(self.values[key])
        except ValueError:
            raise UsageError(f"config {key} must be a number, got {self.values[key]!r}") from None

    def get_bool(self, key: str) -> bool:
        value = self.values[key].lower()
        if value not in _BOOL:
            raise UsageError(f"config {key} must be a boolean, got {self.values[key]!r}")
        return _BOOL[value]

    def get_ints(self, key: str) -> list[int]:
        raw = self.values[key]
        if not raw.strip():
            return []
        try:
            return [int(part) for part in raw.split(",") if part.strip()]
        except ValueError:
            raise UsageError(f"config {key} must be comma-separated integers") from None

    def require_path(self, key: str) -> Path:
        raw = self.values[key]
        if not raw:
            raise UsageError(f"config key {key!r} is required for this command")
        path = Path(raw)
        if not path.exists():
            raise UsageError(f"config {key}: path does not exist: {path}")
        return path

    def output_dir(self) -> Path:
        out = Path(self.values["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        return out

    def seeds(self, cli_seeds: list[int] | None) -> list[int]:
        seeds = cli_seeds if cli_seeds else self.get_ints("seeds")
        if not seeds:
            raise UsageError("at least one seed is required")
        return seeds

    def train_config(self, task: str) -> TrainConfig:
        base = TrainConfig.for_task(task)
        lr = self.values["learning_rate"]
        return TrainConfig(
            epochs=self.get_int("epochs"),
            batch_size=self.get_int("batch_size"),
            learning_rate=float(lr) if lr else base.learning_rate,
            warmup_steps=self.get_int("warmup_steps"),
            weight_decay=self.get_float("weight_decay"),
            class_weighting=self.get_bool("class_weighting"),
        )

    def distill_config(self) -> DistillConfig:
        return DistillConfig(
            epochs=self.get_int("distill_epochs"),
            batch_size=self.get_int("distill_batch_size"),
            learning_rate=self.get_float("distill_learning_rate"),
            warmup_steps=self.get_int("distill_warmup_steps"),
            weight_decay=self.get_float("distill_weight_decay"),
            temperature=self.get_float("temperature"),
            class_weighting=self.get_bool("class_weighting"),
        )

    def pipeline_config(self, task: str) -> PipelineConfig:
        return PipelineConfig(
            train=self.train_config(task),
            distill=self.distill_config(),
            aggregation=self.get("aggregation"),
            normalize_weights=self.get_bool("normalize_weights"),
            sampling=self.get("sampling"),
            jobs=self.get_int("jobs"),
        )


def _load_instances(task: str, path: Path, require_labels: bool) -> list[TaskInstance]:
    if task == TASK_T1:
        instances = t1_instances(data_mod.load_sentence_pairs(path))
    elif task == TASK_T2:
        instances = t2_instances(data_mod.load_strength_records(path))
    elif task == TASK_CONCLUSION:
        instances = conclusion_instances(data_mod.load_conclusion_records(path))
    else:
        raise UsageError(f"unknown task {task!r}")
    if require_labels:
        missing = [i.instance_id for i in instances if i.label is None]
        if missing:
            raise DataError(f"{path}: unlabeled instances: {missing[:3]}")
    return instances


def _pvps_for(config: RunConfig, task: str):
    if config.get("pvp_file"):
        pvps = [p for p in load_pvps(config.require_path("pvp_file")) if p.task == task]
        if not pvps:
            raise ConfigurationError(f"pvp file has no patterns for task {task!r}")
        return pvps
    return list(registry().for_task(task))


def _backend_factories(config: RunConfig, num_labels: int, mock_table_flag: str | None):
    """(member factory, student factory) for the configured backend."""
    kind = config.get("backend")
    if kind == "mock":
        table_path = mock_table_flag or config.get("mock_table")
        if not table_path:
            raise UsageError("mock backend requires mock_table (or --mock-table)")
        if not Path(table_path).exists():
            raise UsageError(f"mock table does not exist: {table_path}")
        table = json.loads(Path(table_path).read_text(encoding="utf-8"))

        def member_factory() -> Backend:
            return MockBackend.from_config(table)

        def student_factory() -> Backend:
            student = dict(table)
            student["num_labels"] = num_labels
            return MockBackend.from_config(student)

        return member_factory, student_factory
    if kind == "real":
        from .hf import HuggingFaceBackend

        checkpoint = config.get("checkpoint")

        def member_factory() -> Backend:
            return HuggingFaceBackend(checkpoint)

        def student_factory() -> Backend:
            return HuggingFaceBackend(checkpoint, num_labels=num_labels)

        return member_factory, student_factory
    raise UsageError(f"unknown backend {kind!r} (expected mock or real)")


# -- commands -------------------------------------------------------------------


def cmd_prepare_data(args) -> int:
    config = RunConfig.load(args.config, args.set)
    out = config.output_dir()
    build = data_mod.build_gold(
        config.require_path("annotations_file"),
        config.require_path("abstracts_file"),
        config.require_path("press_file"),
        out / "gold",
        seed=config.get_int("split_seed"),
        train_size=config.get_int("train_split_size"),
        threshold=config.get_float("match_threshold"),
        variant=config.get("rouge_variant"),
    )
    print(f"gold corpus: {build.manifest.summary()}")
    if config.get("unlabeled_raw_file"):
        pairs, skipped = data_mod.load_unlabeled_pairs(config.require_path("unlabeled_raw_file"))
        data_mod.write_jsonl(
            out / "unlabeled.jsonl",
            (
                {
                    "id": p.pair_id,
                    "doi": p.doi,
                    "press_sentences": p.press_sentences(),
                    "abstract_sentences": list(p.abstract_sentences),
                }
                for p in pairs
            ),
        )
        print(f"unlabeled pairs: {len(pairs)} kept, {len(skipped)} skipped")
    return 0


def _write_run_outputs(outcome: RunOutcome, out: Path, save_students: bool = True) -> None:
    outcome.report.save(out / "report.json")
    for seed, records in outcome.soft_labels.items():
        from .pet import save_soft_labels

        save_soft_labels(records, out / f"soft_labels_seed{seed}.jsonl")
    if save_students:
        for seed, student in outcome.students.items():
            student.save_checkpoint(out / f"student_seed{seed}")


def _run_supervised(config: RunConfig, task: str, seeds, student_factory) -> RunOutcome:
    labels = list(_TASK_LABELS[task])
    train = _load_instances(task, config.require_path("train_file"), require_labels=True)
    test = _load_instances(task, config.require_path("test_file"), require_labels=True)
    hp = config.train_config(task)
    from .pet import classify_argmax, train_supervised

    results = []
    students = {}
    predictions = {}
    for seed in seeds:
        student = student_factory()
        train_supervised(
            student,
            train,
            labels,
            epochs=hp.epochs,
            batch_size=hp.batch_size,
            optimizer=hp.optimizer(),
            class_weighting=hp.class_weighting,
            seed=seed,
        )
        preds = [classify_argmax(student, inst, labels) for inst in test]
        report = macro_prf(preds, [inst.label for inst in test], labels=labels)
        results.append(
            SeedResult(
                seed=seed,
                weights=[],
                precision=report.macro_precision,
                recall=report.macro_recall,
                f1=report.macro_f1,
                report=report,
            )
        )
        students[seed] = student
        predictions[seed] = preds
    mean = {
        "precision": sum(r.precision for r in results) / len(results),
        "recall": sum(r.recall for r in results) / len(results),
        "f1": sum(r.f1 for r in results) / len(results),
    }
    report = RunReport(members=[], seeds=results, mean=mean)
    return RunOutcome(report, students, {}, predictions)


def _build_task_spec(config: RunConfig, mode: str) -> TaskSpec:
    task = config.get("main_task")
    labels = tuple(_TASK_LABELS[task])
    train = _load_instances(task, config.require_path("train_file"), require_labels=True)
    test = _load_instances(task, config.require_path("test_file"), require_labels=True)
    unlabeled = _load_instances(task, config.require_path("unlabeled_file"), require_labels=False)
    main_pvps = _pvps_for(config, task)
    if mode == "mtpet":
        aux_task = config.get("aux_task")
        if not aux_task:
            raise UsageError("mtpet mode requires aux_task")
        aux_train = _load_instances(aux_task, config.require_path("aux_file"), require_labels=True)
        aux_labels = tuple(_TASK_LABELS[aux_task])
        tuples = make_tuples(main_pvps, _pvps_for(config, aux_task))
        alpha_raw = config.get("alpha_aux")
        return TaskSpec(
            main_task=task,
            train=train,
            unlabeled=unlabeled,
            tuples=tuples,
            main_labels=labels,
            aux_task=aux_task,
            aux_train=aux_train,
            aux_labels=aux_labels,
            alpha_main=config.get_float("alpha_main"),
            alpha_aux=float(alpha_raw) if alpha_raw.strip() else None,
            test=test,
        )
    tuples = make_tuples(main_pvps, main_pvps)  # degenerate self-pairing, aux unused
    return TaskSpec(
        main_task=task,
        train=train,
        unlabeled=unlabeled,
        tuples=tuples,
        main_labels=labels,
        alpha_main=config.get_float("alpha_main"),
        test=test,
    )


def cmd_train(args) -> int:
    config = RunConfig.load(args.config, args.set)
    if args.backend:
        config.values["backend"] = args.backend
    if args.jobs:
        config.values["jobs"] = str(args.jobs)
    mode = args.mode or config.get("mode")
    if mode not in ("supervised", "pet", "mtpet"):
        raise UsageError(f"mode must be supervised, pet, or mtpet, got {mode!r}")
    task = config.get("main_task")
    if task not in _TASK_LABELS:
        raise UsageError(f"unknown main_task {task!r}")
    seeds = config.seeds(args.seed)
    out = config.output_dir()
    member_factory, student_factory = _backend_factories(
        config, len(_TASK_LABELS[task]), args.mock_table
    )
    if mode == "supervised":
        if config.get("pvp_file"):
            logger.warning("supervised mode ignores PVP settings")
            print("warning: supervised mode ignores PVP settings", file=sys.stderr)
        outcome = _run_supervised(config, task, seeds, student_factory)
    else:
        spec = _build_task_spec(config, mode)
        pipeline = config.pipeline_config(task)
        runner = run_mtpet if mode == "mtpet" else run_pet
        outcome = runner(spec, seeds, member_factory, student_factory, pipeline)
    _write_run_outputs(outcome, out)
    print(
        f"{mode} on {task}: mean macro F1 {outcome.report.mean['f1']:.4f} "
        f"over {len(seeds)} seed(s); report at {out / 'report.json'}"
    )
    return 0


def cmd_detect_conclusions(args) -> int:
    from .backend import load_checkpoint
    from .tasks import detect_conclusion

    config = RunConfig.load(args.config, args.set)
    model_path = config.get("conclusion_model")
    if not model_path or not Path(model_path).exists():
        raise UsageError(f"conclusion_model path does not exist: {model_path or '(unset)'}")
    backend = load_checkpoint(model_path)
    pvp_index = config.get_int("conclusion_pattern_index")
    pvps = _pvps_for(config, TASK_CONCLUSION)
    if not (0 <= pvp_index < len(pvps)):
        raise UsageError(f"conclusion_pattern_index {pvp_index} outside 0..{len(pvps) - 1}")
    model = PvpModel.from_pvp(backend, pvps[pvp_index], CONCLUSION_LABELS)
    pairs, _ = data_mod.load_unlabeled_pairs(config.require_path("unlabeled_raw_file"))
    if not pairs:
        raise UsageError("unlabeled pair file contains no usable pairs")
    out = config.output_dir()
    detections_path = Path(config.get("detections_file") or out / "conclusions_detected.jsonl")
    rows = []
    for pair in pairs:
        for side, sentences in (
            ("press", pair.press_sentences()),
            ("abstract", list(pair.abstract_sentences)),
        ):
            index, sentence, score = detect_conclusion(sentences, model)
            rows.append(
                {
                    "id": pair.pair_id,
                    "side": side,
                    "index": index,
                    "sentence": sentence,
                    "score": score,
                }
            )
    data_mod.write_jsonl(detections_path, rows)
    print(f"wrote {len(rows)} selections for {len(pairs)} pairs to {detections_path}")
    return 0


def cmd_evaluate(args) -> int:
    config = RunConfig.load(args.config, args.set)
    predictions_rows = data_mod.read_jsonl(Path(args.predictions))
    gold_rows = data_mod.read_jsonl(Path(args.gold))
    try:
        predictions = {row["id"]: int(row["label"]) for row in predictions_rows}
        golds = {
            row["id"]: int(row["exaggeration_label"] if "exaggeration_label" in row else row["label"])
            for row in gold_rows
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"schema mismatch in predictions/gold files: {exc}") from exc
    pred_ids, gold_ids = sorted(predictions), sorted(golds)
    if pred_ids != gold_ids:
        for p, g in zip(pred_ids, gold_ids):
            if p != g:
                raise UsageError(f"prediction/gold id mismatch: {p!r} vs {g!r}")
        raise UsageError(
            f"prediction/gold id mismatch: {len(pred_ids)} predictions vs {len(gold_ids)} golds"
        )
    ordered_preds = [predictions[i] for i in gold_ids]
    ordered_golds = [golds[i] for i in gold_ids]
    report = macro_prf(ordered_preds, ordered_golds)
    out = config.output_dir()
    report.save(out / "eval_report.json")
    (out / "eval_report.txt").write_text(report.text_table() + "\n", encoding="utf-8")
    print(report.text_table())
    print(f"macro F1 {report.macro_f1:.4f}")
    if args.transitions:
        pairs = []
        try:
            pairs = data_mod.load_sentence_pairs(Path(args.gold))
            if any(p.press_strength is None or p.abstract_strength is None for p in pairs):
                raise UsageError("--transitions requires gold strength fields")
        except (KeyError, DataError) as exc:
            raise UsageError(f"--transitions requires a sentence-pair gold file: {exc}") from exc
        by_id = {p.pair_id: p for p in pairs}
        ordered_pairs = [by_id[i] for i in gold_ids]
        bins = transition_error_bins(ordered_pairs, [ordered_preds])
        data_mod.write_jsonl(out / "transitions.jsonl", (b.to_dict() for b in bins))
        for b in bins:
            print(f"{b.key}: {b.wrong}/{b.count} wrong ({b.proportion_wrong:.2f})")
    return 0


def cmd_learning_curve(args) -> int:
    config = RunConfig.load(args.config, args.set)
    task = config.get("main_task")
    labels = list(_TASK_LABELS[task])
    sizes = config.get_ints("curve_sizes")
    if not sizes:
        raise UsageError("curve_sizes is required for learning-curve")
    seeds = config.seeds(args.seed)
    train = _load_instances(task, config.require_path("train_file"), require_labels=True)
    test = _load_instances(task, config.require_path("test_file"), require_labels=True)
    member_factory, student_factory = _backend_factories(config, len(labels), args.mock_table)
    mode = config.get("curve_mode")
    hp = config.train_config(task)

    from .pet import classify_argmax, train_supervised

    def supervised_point(subset, seed):
        student = student_factory()
        train_supervised(
            student,
            subset,
            labels,
            epochs=hp.epochs,
            batch_size=hp.batch_size,
            optimizer=hp.optimizer(),
            class_weighting=hp.class_weighting,
            seed=seed,
        )
        preds = [classify_argmax(student, inst, labels) for inst in test]
        return macro_prf(preds, [inst.label for inst in test], labels=labels)

    def pet_point(subset, seed):
        unlabeled = _load_instances(
            task, config.require_path("unlabeled_file"), require_labels=False
        )
        pvps = _pvps_for(config, task)
        spec = TaskSpec(
            main_task=task,
            train=list(subset),
            unlabeled=unlabeled,
            tuples=make_tuples(pvps, pvps),
            main_labels=tuple(labels),
            test=test,
        )
        outcome = run_pet(spec, [seed], member_factory, student_factory, config.pipeline_config(task))
        return outcome.report.seeds[0].report

    if mode == "supervised":
        point = supervised_point
    elif mode == "pet":
        point = pet_point
    else:
        raise UsageError(f"curve_mode must be supervised or pet, got {mode!r}")

    curve, long_rows = learning_curve(point, train, sizes, seeds, label_of=lambda r: r.label)
    out = config.output_dir()
    write_curve_csv(long_rows, out / "learning_curve.csv")
    print(f"{'size':>6}  {'mean F1':>8}")
    for size, f1 in curve:
        print(f"{size:>6}  {f1:>8.4f}")
    print(f"CSV at {out / 'learning_curve.csv'}")
    return 0


# -- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", required=True, help="path to the run config file")
    shared.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    shared.add_argument(
        "--seed", action="append", type=int, default=[], help="override config seeds (repeatable)"
    )
    shared.add_argument("--jobs", type=int, default=0, help="cap worker counts")
    shared.add_argument("--backend", choices=["real", "mock"], help="override config backend")
    shared.add_argument("--mock-table", dest="mock_table", help="mock backend table JSON")

    parser = argparse.ArgumentParser(
        prog="exagpet",
        description="Few-shot exaggeration detection pipelines",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", parents=[shared], help="build the gold corpus files")
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train", parents=[shared], help="train a model variant")
    p.add_argument(
        "mode",
        nargs="?",
        choices=["supervised", "pet", "mtpet"],
        help="variant to train (defaults to the config's mode key)",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser(
        "detect-conclusions", parents=[shared], help="select conclusion sentences"
    )
    p.set_defaults(func=cmd_detect_conclusions)

    p = sub.add_parser("evaluate", parents=[shared], help="score a predictions file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--transitions", action="store_true", help="also bin errors by strength transition")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("learning-curve", parents=[shared], help="F1 vs. training-set size")
    p.set_defaults(func=cmd_learning_curve)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        # classify by the underlying failure so the exit-code contract holds
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.__cause__, NumericalFailureError):
            return 4
        if isinstance(exc.__cause__, UsageError):
            return 2
        return 3
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExagPetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
