"""Binary dual masks from attention maps, and their application to features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionPair
from .errors import NonBinaryInput, ShapeMismatch, ThresholdOutOfRange
from .tensor import Tensor, mul


@dataclass(frozen=True)
class MaskPair:
    spatial: Tensor  # [N x] 1 x H x W, entries in {0, 1}
    channel: Tensor  # [N x] C x 1 x 1, entries in {0, 1}
    tau_s: float
    tau_c: float


def _check_threshold(name: str, tau: float) -> None:
    if not 0.0 < tau < 1.0:
        raise ThresholdOutOfRange(f"{name} must lie in (0, 1), got {tau}")


def threshold_mask(attention, tau: float) -> Tensor:
    """0 where attention >= tau (inclusive), 1 elsewhere."""
    a = attention.data if isinstance(attention, Tensor) else np.asarray(attention, dtype=np.float64)
    return Tensor(np.where(a >= tau, 0.0, 1.0))


def make_masks(attn: AttentionPair, tau_s: float, tau_c: float) -> MaskPair:
    _check_threshold("tau_s", tau_s)
    _check_threshold("tau_c", tau_c)
    return MaskPair(
        spatial=threshold_mask(attn.spatial, tau_s),
        channel=threshold_mask(attn.channel, tau_c),
        tau_s=tau_s,
        tau_c=tau_c,
    )


def _check_mask_fits(feature: Tensor, mask: Tensor, kind: str) -> None:
    if mask.ndim != feature.ndim:
        raise ShapeMismatch(f"{kind} mask {mask.shape} vs feature {feature.shape}")
    if kind == "spatial":
        want = feature.shape[:-3] + (1,) + feature.shape[-2:]
    else:
        want = feature.shape[:-2] + (1, 1)
    if mask.shape != want:
        raise ShapeMismatch(f"{kind} mask {mask.shape}, expected {want} for feature {feature.shape}")


def apply_masks(student_aligned: Tensor, masks: MaskPair) -> tuple[Tensor, Tensor]:
    """Return (spatially masked, channel masked) copies of the aligned student feature."""
    _check_mask_fits(student_aligned, masks.spatial, "spatial")
    _check_mask_fits(student_aligned, masks.channel, "channel")
    return mul(student_aligned, masks.spatial), mul(student_aligned, masks.channel)


def mask_ratio(mask) -> float:
    """Fraction of entries that are zero."""
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    if not np.all((m == 0.0) | (m == 1.0)):
        raise NonBinaryInput("mask_ratio expects entries in {0, 1}")
    if m.size == 0:
        return 0.0
    return float(np.count_nonzero(m == 0.0)) / m.size


def random_spatial_mask(shape: tuple[int, ...], ratio: float, rng: np.random.Generator) -> Tensor:
    """I.i.d. Bernoulli mask: each entry is 0 with probability ``ratio``."""
    if not 0.0 <= ratio <= 1.0:
        raise ThresholdOutOfRange(f"random mask ratio must lie in [0, 1], got {ratio}")
    return Tensor(np.where(rng.random(shape) < ratio, 0.0, 1.0))
