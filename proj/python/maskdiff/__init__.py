"""Mask-conditioned diffusion for grayscale cell images."""

from maskdiff._core import (
    Checkpoint,
    DenoiserParams,
    NoiseSchedule,
    TrainConfig,
    TrainResult,
    UNetConfig,
    auroc,
    average_precision,
    background_mask,
    categorize,
    class_names,
    cosine_schedule,
    denoise,
    feature_defect_masks,
    fid,
    forward_marginal,
    init_params,
    kid,
    load_checkpoint,
    make_pairs,
    mmd2_unbiased,
    run_cli,
    sample,
    toyset,
    train,
)

__all__ = [
    "Checkpoint",
    "DenoiserParams",
    "NoiseSchedule",
    "TrainConfig",
    "TrainResult",
    "UNetConfig",
    "auroc",
    "average_precision",
    "background_mask",
    "categorize",
    "class_names",
    "cosine_schedule",
    "denoise",
    "feature_defect_masks",
    "fid",
    "forward_marginal",
    "init_params",
    "kid",
    "load_checkpoint",
    "make_pairs",
    "mmd2_unbiased",
    "run_cli",
    "sample",
    "toyset",
    "train",
]
