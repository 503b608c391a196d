"""Spatial and channel attention maps computed from a frozen teacher feature.

Features are ``C x H x W`` or batched ``N x C x H x W``; batch entries are
independent. Attention is a constant of the training step, so the results
never carry gradient links back to the teacher.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveTemperature, ShapeMismatch
from .tensor import Tensor


@dataclass(frozen=True)
class AttentionPair:
    spatial: Tensor  # [N x] 1 x H x W, values in (0, 1)
    channel: Tensor  # [N x] C x 1 x 1, values in (0, 1)
    temperature: float


def _feature_array(teacher) -> np.ndarray:
    data = teacher.data if isinstance(teacher, Tensor) else np.asarray(teacher, dtype=np.float64)
    if data.ndim not in (3, 4):
        raise ShapeMismatch(f"expected C x H x W or N x C x H x W feature, got {data.shape}")
    return data


def _check_temperature(temperature: float) -> None:
    if not temperature > 0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {temperature}")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def spatial_attention(teacher, temperature: float) -> Tensor:
    """sigmoid(||F_n||^2 / (C T)) at every position n, laid out as 1 x H x W."""
    _check_temperature(temperature)
    f = _feature_array(teacher)
    c = f.shape[-3]
    sq_norm = (f * f).sum(axis=-3, keepdims=True)
    return Tensor(_sigmoid(sq_norm / (c * temperature)))


def channel_attention(teacher, temperature: float) -> Tensor:
    """sigmoid(spatial mean of channel k / T) for every channel k, as C x 1 x 1."""
    _check_temperature(temperature)
    f = _feature_array(teacher)
    h, w = f.shape[-2:]
    total = f.sum(axis=(-2, -1), keepdims=True)
    return Tensor(_sigmoid(total / (h * w * temperature)))


def dual_attention(teacher, temperature: float) -> AttentionPair:
    return AttentionPair(
        spatial=spatial_attention(teacher, temperature),
        channel=channel_attention(teacher, temperature),
        temperature=temperature,
    )
