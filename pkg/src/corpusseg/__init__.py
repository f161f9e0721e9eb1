"""Corpus-level segmentation objectives, metrics, re-ranking, and a toy trainer."""

__version__ = "0.1.0"

from .grids import (
    DegenerateInputError,
    GradientField,
    HardSegmentation,
    InvalidInputError,
    ScoreMap,
    SoftSegmentation,
    SuperpixelMap,
    downsample_to_soft,
    patch_index,
    softmax,
    softmax_jacobian,
    upsample_naive,
    upsample_superpixel,
)
from .softloss import (
    COMBINED_ALPHA,
    LOSS_NAMES,
    ExpectedOverlap,
    LossReport,
    combined_loss,
    combined_value,
    cross_entropy,
    expected_overlap,
    finite_diff_check,
    grad_cross_entropy,
    gradcheck_suite,
    grad_iou,
    grad_uoi,
    iou_objective,
    merge,
    score_loss,
    uoi_loss,
)
from .hardmetrics import (
    ConfusionCounts,
    SweepTable,
    class_iou,
    class_uoi,
    confusion_counts,
    degenerate_uoi_classes,
    excluded_iou_classes,
    gradient_sweep,
    iou_grad_fpfn,
    lower_bound_gap,
    mean_iou,
    mean_uoi,
    sweep_monotonicity,
    uoi_grad_fpfn,
)
from .rerank import (
    FeatureVector,
    ProposalSet,
    RankModel,
    kl_score,
    oracle_select,
    proposal_features,
    proposal_quality,
    random_select,
    rank_select,
    select_by_score,
    train_ranker,
)
from .synthetic import SyntheticDataset, SyntheticImage, gen_proposals, gen_synthetic
from .trainer import (
    CollapseReport,
    TrainConfig,
    TrainHistory,
    TrainingDivergedError,
    WarmStartReport,
    collapse_experiment,
    init_params,
    train,
    warm_start_protocol,
)

__all__ = [
    "__version__",
    "DegenerateInputError",
    "GradientField",
    "HardSegmentation",
    "InvalidInputError",
    "ScoreMap",
    "SoftSegmentation",
    "SuperpixelMap",
    "downsample_to_soft",
    "patch_index",
    "softmax",
    "softmax_jacobian",
    "upsample_naive",
    "upsample_superpixel",
    "COMBINED_ALPHA",
    "LOSS_NAMES",
    "ExpectedOverlap",
    "LossReport",
    "combined_loss",
    "combined_value",
    "cross_entropy",
    "expected_overlap",
    "finite_diff_check",
    "grad_cross_entropy",
    "gradcheck_suite",
    "grad_iou",
    "grad_uoi",
    "iou_objective",
    "merge",
    "score_loss",
    "uoi_loss",
    "ConfusionCounts",
    "SweepTable",
    "class_iou",
    "class_uoi",
    "confusion_counts",
    "degenerate_uoi_classes",
    "excluded_iou_classes",
    "gradient_sweep",
    "iou_grad_fpfn",
    "lower_bound_gap",
    "mean_iou",
    "mean_uoi",
    "sweep_monotonicity",
    "uoi_grad_fpfn",
    "FeatureVector",
    "ProposalSet",
    "RankModel",
    "kl_score",
    "oracle_select",
    "proposal_features",
    "proposal_quality",
    "random_select",
    "rank_select",
    "select_by_score",
    "train_ranker",
    "SyntheticDataset",
    "SyntheticImage",
    "gen_proposals",
    "gen_synthetic",
    "CollapseReport",
    "TrainConfig",
    "TrainHistory",
    "TrainingDivergedError",
    "WarmStartReport",
    "collapse_experiment",
    "init_params",
    "train",
    "warm_start_protocol",
]
