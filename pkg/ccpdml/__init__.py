"""
ccpdml: Chance-constrained proxy training for deep metric learning

An embedding network is trained by a sequence of regularized projections.
Before each projection the class proxies are re-initialized from training
samples chosen by greedy k-Center, which keeps the proxies covering each
class. Retrieval quality is measured with P@1, P@R and MAP@R, next to
covering-radius and constraint-violation diagnostics.
"""

from .net import (
    EmbeddingNetwork,
    AdamState,
    norm_clip,
    forward,
    backward,
    adam_update,
    adam_step,
    omega,
    lipschitz_constant,
    parameter_distance,
    save_checkpoint,
    load_checkpoint,
)

from .losses import (
    LossKind,
    LossSpec,
    LossResult,
    PairBatch,
    LOSS_PRESETS,
    generalized_contrastive,
    violation_indicator,
    pair_loss,
    batch_loss_and_grads,
    multi_similarity_loss,
)

from .kcenter import (
    PointCloud,
    CandidatePool,
    covering_radius,
    greedy_k_center,
    exact_k_center,
    covering_radius_curve,
    average_covering_radius,
    select_proxies,
)

from .metrics import (
    RetrievalReport,
    rank_references,
    map_at_r,
    evaluate,
    violation_rate,
    mean_generalized_contrastive,
    induced_epsilon,
    class_covering_radii,
    proxy_diversity,
)

from .data import (
    Dataset,
    SamplerConfig,
    MPerClassSampler,
    load_idx,
    write_idx,
    synth_blobs,
    split,
    merge_test,
    subsample,
    next_batch,
)

from .ccp import (
    ProxySet,
    CCPState,
    CCPResult,
    ProjectionRecord,
    init_proxies,
    draw_pools,
    projection_objective,
    proximal_step,
    run_projection,
    run_ccp,
)

from .config import (
    ExperimentConfig,
    load_config,
    config_items,
    dump_config,
)

from .loads import (
    load_mnist,
    load_preset,
    available_presets,
)

from .errors import (
    CCPError,
    ConfigError,
    NumericError,
    ShapeError,
)


__all__ = [
    # net
    "EmbeddingNetwork",
    "AdamState",
    "norm_clip",
    "forward",
    "backward",
    "adam_update",
    "adam_step",
    "omega",
    "lipschitz_constant",
    "parameter_distance",
    "save_checkpoint",
    "load_checkpoint",
    # losses
    "LossKind",
    "LossSpec",
    "LossResult",
    "PairBatch",
    "LOSS_PRESETS",
    "generalized_contrastive",
    "violation_indicator",
    "pair_loss",
    "batch_loss_and_grads",
    "multi_similarity_loss",
    # kcenter
    "PointCloud",
    "CandidatePool",
    "covering_radius",
    "greedy_k_center",
    "exact_k_center",
    "covering_radius_curve",
    "average_covering_radius",
    "select_proxies",
    # metrics
    "RetrievalReport",
    "rank_references",
    "map_at_r",
    "evaluate",
    "violation_rate",
    "mean_generalized_contrastive",
    "induced_epsilon",
    "class_covering_radii",
    "proxy_diversity",
    # data
    "Dataset",
    "SamplerConfig",
    "MPerClassSampler",
    "load_idx",
    "write_idx",
    "synth_blobs",
    "split",
    "merge_test",
    "subsample",
    "next_batch",
    # ccp
    "ProxySet",
    "CCPState",
    "CCPResult",
    "ProjectionRecord",
    "init_proxies",
    "draw_pools",
    "projection_objective",
    "proximal_step",
    "run_projection",
    "run_ccp",
    # configuration
    "ExperimentConfig",
    "load_config",
    "config_items",
    "dump_config",
    # resources
    "load_mnist",
    "load_preset",
    "available_presets",
    # errors
    "CCPError",
    "ConfigError",
    "NumericError",
    "ShapeError",
]
