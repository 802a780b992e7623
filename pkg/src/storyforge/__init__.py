"""Evaluation and reward toolkit for counterfactual story retelling."""

from .agreement import (
    AgreementReport,
    RatingMatrix,
    cohen_weighted_kappa,
    compute_agreement_report,
    criteria_correlation,
    gwet_ac2,
    weighted_percent_agreement,
)
from .corpus import (
    Candidate,
    GenerationSet,
    SplitManifest,
    StoryItem,
    TaskItem,
    load_split,
    load_tasks,
    take_prefix,
)
from .errors import StoryForgeError
from .evalharness import EvalRow, VerdictCache, evaluate_references, evaluate_reteller
from .judge import (
    JudgePrompt,
    JudgeVerdict,
    MockJudgeBackend,
    build_prompt,
    judge_criteria_set,
    judge_one,
)
from .narrative import (
    AnnotationRecord,
    AnnotationStore,
    CriteriaScores,
    StageSpan,
    StageType,
    annotated_text,
    attach_annotation,
    min_lrc,
    narrativity_score,
)
from .reward import (
    CompletionGroup,
    PlateauConfig,
    RewardGroup,
    RewardSpec,
    TrainingTrace,
    compute_reward,
    detect_reward_plateau,
    detect_sft_convergence,
    group_advantages,
    reward_batch,
)
from .similarity import (
    DiversityRecord,
    PairwiseDistances,
    SimilarityScore,
    TokenOverlapProvider,
    bleu4,
    diversity,
    nearest_reference_similarity,
    pairwise_distances,
    rouge_l,
    select_top_diverse,
)

__version__ = "0.1.0"
