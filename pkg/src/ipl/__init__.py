"""Incremental prototype learning for few-shot class-incremental classification.

The package trains an extensible feature representation with simulated
incremental episodes and grows the classifier by non-training prototype
refinement guided by a relation matrix, evaluated over a session protocol
with cumulative test sets.  All math runs on a self-contained float64
tensor engine with tape-based reverse-mode differentiation.
"""

__version__ = "0.1.0"

from .checkpoint import load_checkpoint, load_model, save_checkpoint, save_model
from .data import (
    Dataset,
    SessionSchedule,
    build_schedule,
    generate_gaussian_mixture,
    load_csv,
    save_csv,
)
from .episodes import (
    Episode,
    EpisodeConfig,
    class_mean_embeddings,
    eliminate_prototypes,
    sample_episode,
)
from .metrics import MetricsReport
from .model import (
    BackboneParams,
    ModelConfig,
    ModelParams,
    ProjectionHeads,
    PrototypeBank,
    classify_cosine,
    extract_features,
    init_params,
)
from .numerics import ComputeGraph, Tensor, backward, grad_check, sgd_step
from .pipeline import (
    TrainConfig,
    absorb_session,
    alt_update,
    evaluate,
    finetune_baseline,
    run_repeated,
    run_sessions,
    train_base_standard,
    train_episode_step,
    train_incremental_representation,
)
from .refinement import (
    RefinementConfig,
    RelationMatrix,
    project_to_latent,
    refine,
    refine_prototypes,
    relation_matrix,
)
from .rng import RngState

__all__ = [
    "__version__",
    "Tensor",
    "ComputeGraph",
    "backward",
    "sgd_step",
    "grad_check",
    "RngState",
    "Dataset",
    "SessionSchedule",
    "build_schedule",
    "generate_gaussian_mixture",
    "load_csv",
    "save_csv",
    "ModelConfig",
    "ModelParams",
    "BackboneParams",
    "PrototypeBank",
    "ProjectionHeads",
    "init_params",
    "extract_features",
    "classify_cosine",
    "Episode",
    "EpisodeConfig",
    "sample_episode",
    "class_mean_embeddings",
    "eliminate_prototypes",
    "RefinementConfig",
    "RelationMatrix",
    "project_to_latent",
    "relation_matrix",
    "refine_prototypes",
    "refine",
    "TrainConfig",
    "MetricsReport",
    "train_base_standard",
    "train_episode_step",
    "train_incremental_representation",
    "absorb_session",
    "finetune_baseline",
    "alt_update",
    "run_sessions",
    "run_repeated",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
    "save_model",
    "load_model",
]
