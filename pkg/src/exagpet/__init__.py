"""Few-shot scientific exaggeration detection.

Cloze-pattern training over a masked-language-model backend, with a
multi-task extension that trains each ensemble member on complementary
main/auxiliary pattern-verbalizer pairs, ensemble soft labeling, and
distillation into a final classifier.
"""

from .backend import (
    Backend,
    LossSpec,
    MaskedSequence,
    MockBackend,
    OptimizerConfig,
    SegmentPair,
    TableEntry,
    TrainExample,
    Vocabulary,
    load_checkpoint,
)
from .errors import (
    CheckpointError,
    ConfigurationError,
    CoverageError,
    DataError,
    ExagPetError,
    MalformedSequenceError,
    NumericalFailureError,
    RateLimitError,
    StageError,
    UsageError,
    VocabularyError,
)
from .evaluation import (
    EvalReport,
    TransitionBin,
    aggregate_seeds,
    learning_curve,
    macro_prf,
    transition_error_bins,
)
from .multitask import (
    MlmConfig,
    PipelineConfig,
    RunOutcome,
    RunReport,
    TaskSpec,
    alpha_aux,
    mlm_domain_adapt,
    run_mtpet,
    run_pet,
    task_selection,
    train_mtpet_member,
)
from .pet import (
    DistillConfig,
    EnsembleSpec,
    PvpModel,
    SoftLabelRecord,
    TaskInstance,
    TrainConfig,
    class_weights,
    distill,
    distillation_targets,
    label_distribution,
    label_score,
    load_soft_labels,
    save_soft_labels,
    soft_label,
    train_single,
    zero_shot_accuracy,
)
from .pvp import (
    Pattern,
    Pvp,
    PvpTuple,
    Verbalizer,
    load_pvps,
    make_tuples,
    registry,
    save_pvps,
    search_verbalizers,
)
from .tasks import (
    ClaimStrength,
    ConclusionRecord,
    DocumentPair,
    ExaggerationLabel,
    SentencePair,
    StrengthRecord,
    derive_exaggeration,
    detect_conclusion,
    map_sumner_to_li,
    predict_t1,
    predict_t2,
)

__version__ = "0.1.0"
