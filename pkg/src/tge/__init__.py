"""Token compression and training-data selection for ultra-high-resolution patch-token grids."""

__version__ = "0.1.0"

from .affinity import AffinityConfig, ClusterAssignment, cluster_grid, grow_cluster, neighbor_affinity, pool_clusters
from .analysis import (
    AblationResult,
    AblationSpec,
    BackgroundLexicon,
    ablate_tokens,
    background_score,
    buffer_ring,
    degradation_metric,
    prune_background,
    signal_fixture,
    tokens_from_bbox,
)
from .anchored import (
    RetainedTokens,
    SelectionConfig,
    compress_grid,
    compress_grids,
    compress_image,
    score_tokens,
    select_anchored,
)
from .encoder import (
    AdapterModel,
    AttentionMap,
    EncodedOutput,
    EncoderParams,
    adapter_loss_and_gradient,
    detect_register_tokens,
    encode,
    logit_lens,
    sgd_step,
    softmax_attention,
)
from .influence import (
    GradientFeature,
    InfluenceRanking,
    ProjectionSketch,
    build_sketch,
    influence_score,
    project_gradient,
    rank_and_select,
    warmup_and_featurize,
)
from .token_model import (
    CompressionReport,
    FlopsModel,
    GridLayout,
    TokenGrid,
    estimate_flops,
    fit_flops_model,
    load_grid,
    patch_count,
    pool_baseline,
    save_grid,
    token_budget,
)

__all__ = [
    "AblationResult",
    "AblationSpec",
    "AdapterModel",
    "AffinityConfig",
    "AttentionMap",
    "BackgroundLexicon",
    "ClusterAssignment",
    "CompressionReport",
    "EncodedOutput",
    "EncoderParams",
    "FlopsModel",
    "GradientFeature",
    "GridLayout",
    "InfluenceRanking",
    "ProjectionSketch",
    "RetainedTokens",
    "SelectionConfig",
    "TokenGrid",
    "ablate_tokens",
    "adapter_loss_and_gradient",
    "background_score",
    "buffer_ring",
    "build_sketch",
    "cluster_grid",
    "compress_grid",
    "compress_grids",
    "compress_image",
    "degradation_metric",
    "detect_register_tokens",
    "encode",
    "estimate_flops",
    "fit_flops_model",
    "grow_cluster",
    "influence_score",
    "load_grid",
    "logit_lens",
    "neighbor_affinity",
    "patch_count",
    "pool_baseline",
    "pool_clusters",
    "project_gradient",
    "prune_background",
    "rank_and_select",
    "save_grid",
    "score_tokens",
    "select_anchored",
    "sgd_step",
    "signal_fixture",
    "softmax_attention",
    "token_budget",
    "tokens_from_bbox",
    "warmup_and_featurize",
]
