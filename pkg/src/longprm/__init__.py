"""Step-level reward-model data pipeline for long reflective reasoning.

Pipeline stages: segment raw traces into steps, label the steps (LLM judge
with propagation/cessation rules, or Monte-Carlo rollouts), train a
desk-scale step scorer on the labels, and evaluate with best-of-N,
reward-guided search, step-level classification metrics, and diagnostic
sets.  A deterministic simulated world with analytically known step
correctness backs the whole test suite.
"""

from .backends import (
    BackendError,
    CompletionBackend,
    HttpBackendConfig,
    HttpCompletionBackend,
    RateLimitedError,
    SamplingParams,
    derive_seed,
    http_complete,
)
from .core import (
    AnnotatedTrace,
    DatasetFormatError,
    LocalEvent,
    LocalEventTag,
    Problem,
    ReasoningTrace,
    SolutionClass,
    Step,
    StepAnnotation,
    answers_match,
    classify_solution,
    count_tokens,
    extract_final_answer,
    make_trace,
    normalize_answer,
    problem_of,
    read_dataset,
    split_ef_rb,
    write_dataset,
)
from .judge import (
    AnnotationFailed,
    JudgeRequest,
    JudgeVerdict,
    annotate_trace,
    build_judge_prompt,
    expected_labels,
    parse_judge_response,
    validate_label_sequence,
)
from .mc import (
    McConfig,
    RolloutBudget,
    RolloutOutcome,
    agreement_by_bins,
    mc_annotate_trace,
    mc_label_step,
    overall_agreement,
)
from .prm import (
    ToyPrmModel,
    ToyPrmScorer,
    TrainConfig,
    extract_features,
    fes_dataset,
    load_model,
    prm_loss,
    prm_loss_gradient,
    save_model,
    train,
    truncate_at_first_error,
)
from .segment import (
    SegmentationConfig,
    Strategy,
    flatten_linebreaks,
    resegment_with_llm,
    segment,
    segment_sdn,
    segment_srw,
    validate_segmentation,
)
from .simworld import (
    AntiOracleScorer,
    ConstantScorer,
    OracleScorer,
    SimCompletionBackend,
    SimGenerator,
    SimJudgeBackend,
    SimWorld,
    make_problem,
    sim_complete_from_prefix,
    sim_generate_trace,
    sim_judge,
)
from .evaluate import (
    EvalReport,
    best_of_n,
    dataset_stats,
    ef_rb_accuracy,
    prm_at_n,
    step_level_metrics,
    step_search,
)

__version__ = "0.1.0"
