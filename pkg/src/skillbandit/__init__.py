"""Contextual-bandit exercise recommendation with skill-gain rewards.

The package pairs four recommendation policies (Normal-Inverse-Gamma
Thompson sampling, linear Thompson sampling, and user/item neighborhood
collaborative filtering) with an offline replay evaluator over logged
tutoring interactions, a preprocessing pipeline, a grid-search tuner, and a
knowledge-tracing synthetic environment for end-to-end validation.
"""

__version__ = "0.1.0"

from .policies import (
    ItemBasedCF,
    LinArmState,
    LinearThompsonSampling,
    NigArmState,
    Policy,
    ThompsonSampling,
    UniformRandom,
    UserBasedCF,
    cosine_sim,
    itemcf_predict,
    make_policy,
    usercf_predict,
)
from .preprocess import (
    ContextEncoder,
    ExperimentData,
    PreprocessReport,
    compute_rewards,
    dedup_latest,
    enforce_warm_start,
    filter_low_activity,
    fit_context_encoder,
    load_data_dir,
    run_pipeline,
    temporal_split,
)
from .replay import (
    ReplayConfig,
    ReplayTrace,
    build_candidates,
    emit_metrics,
    pretrain,
    replay,
)
from .synthetic import BktSkillParams, SyntheticSpec, bkt_step, generate
from .tuning import TuneResult, final_run, grid_search
from .types import (
    Interaction,
    LearnerProfile,
    RewardMatrix,
    SplitDataset,
)

__all__ = [
    "BktSkillParams",
    "ContextEncoder",
    "ExperimentData",
    "Interaction",
    "ItemBasedCF",
    "LearnerProfile",
    "LinArmState",
    "LinearThompsonSampling",
    "NigArmState",
    "Policy",
    "PreprocessReport",
    "ReplayConfig",
    "ReplayTrace",
    "RewardMatrix",
    "SplitDataset",
    "SyntheticSpec",
    "ThompsonSampling",
    "TuneResult",
    "UniformRandom",
    "UserBasedCF",
    "bkt_step",
    "build_candidates",
    "compute_rewards",
    "cosine_sim",
    "dedup_latest",
    "emit_metrics",
    "enforce_warm_start",
    "filter_low_activity",
    "final_run",
    "fit_context_encoder",
    "generate",
    "grid_search",
    "itemcf_predict",
    "load_data_dir",
    "make_policy",
    "pretrain",
    "replay",
    "run_pipeline",
    "temporal_split",
    "usercf_predict",
]
