"""Dual masked knowledge distillation on a from-scratch autodiff core."""

from .attention import AttentionPair, channel_attention, dual_attention, spatial_attention
from .blocks import AlignLayer, ConvGenBlock, FusionWeights, LevelBlocks, MlpGenBlock, align, fuse, gen_conv, gen_mlp
from .distill import (
    DistillConfig,
    LevelPair,
    Variant,
    baseline_loss,
    distill_step,
    dmkd_loss,
    overall_loss,
)
from .masking import MaskPair, apply_masks, make_masks, mask_ratio
from .tensor import Tensor, backward, no_grad

__all__ = [
    "AlignLayer",
    "AttentionPair",
    "ConvGenBlock",
    "DistillConfig",
    "FusionWeights",
    "LevelBlocks",
    "LevelPair",
    "MaskPair",
    "MlpGenBlock",
    "Tensor",
    "Variant",
    "align",
    "apply_masks",
    "backward",
    "baseline_loss",
    "channel_attention",
    "distill_step",
    "dmkd_loss",
    "dual_attention",
    "fuse",
    "gen_conv",
    "gen_mlp",
    "make_masks",
    "mask_ratio",
    "no_grad",
    "overall_loss",
    "spatial_attention",
]
