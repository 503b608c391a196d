"""Distillation losses, the masking-variant dispatcher and one training step."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .attention import dual_attention
from .blocks import LevelBlocks, align, fuse, gen_conv, gen_mlp
from .errors import ShapeMismatch, ThresholdOutOfRange
from .masking import apply_masks, make_masks, mask_ratio, random_spatial_mask
from .optim import SGD
from .tensor import Tensor, add, backward, cross_entropy, mul, no_grad, sub, sum


class Variant(str, enum.Enum):
    DUAL = "dual"
    SPATIAL_ONLY = "spatial-only"
    CHANNEL_ONLY = "channel-only"
    RANDOM_MASK = "random-mask"
    NO_MASK = "no-mask"
    BASELINE_FITNET = "baseline-fitnet"

    @classmethod
    def parse(cls, value: "str | Variant") -> "Variant":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {
            "spatialonly": "spatial-only",
            "channelonly": "channel-only",
            "randommask": "random-mask",
            "nomask": "no-mask",
            "baselinefitnet": "baseline-fitnet",
            "fitnet": "baseline-fitnet",
        }
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            choices = ", ".join(v.value for v in cls)
            raise ValueError(f"unknown variant {value!r}; choose from {choices}") from None


@dataclass
class DistillConfig:
    tau_s: float = 0.55
    tau_c: float = 0.65
    temperature: float = 0.5
    gamma: float = 5e-6
    alpha_init: float = 0.5
    beta_init: float = 0.5
    variant: Variant = Variant.DUAL
    random_mask_ratio: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        for name in ("tau_s", "tau_c"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ThresholdOutOfRange(f"{name} must lie in (0, 1), got {value}")
        if not 0.0 <= self.random_mask_ratio <= 1.0:
            raise ThresholdOutOfRange(f"random_mask_ratio must lie in [0, 1], got {self.random_mask_ratio}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DistillConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown DistillConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LevelPair:
    student_feature: Tensor
    teacher_feature: Tensor
    level_index: int = 0

    def __post_init__(self):
        s, t = self.student_feature.shape, self.teacher_feature.shape
        if len(s) != len(t) or s[:-3] != t[:-3] or s[-2:] != t[-2:]:
            raise ShapeMismatch(f"level {self.level_index}: student {s} vs teacher {t}")


@dataclass
class DMKDOutput:
    loss: Tensor
    reconstruction: Tensor
    mask_ratio_s: float
    mask_ratio_c: float


def squared_error_sum(pred: Tensor, target: Tensor) -> Tensor:
    """Unnormalized sum of squared differences; target is treated as a constant."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    diff = sub(pred, target.detach())
    return sum(mul(diff, diff)).reshape(())


def baseline_loss(level: LevelPair, align_layer) -> Tensor:
    """FitNet-style template: squared error between aligned student and teacher."""
    return squared_error_sum(align(level.student_feature, align_layer), level.teacher_feature)


def dmkd_forward(level: LevelPair, cfg: DistillConfig, blocks: LevelBlocks,
                 rng: np.random.Generator | None = None) -> DMKDOutput:
    variant = cfg.variant
    teacher = level.teacher_feature.detach()
    aligned = align(level.student_feature, blocks.align)
    if aligned.shape != teacher.shape:
        raise ShapeMismatch(f"aligned student {aligned.shape} vs teacher {teacher.shape}")
    alpha, beta = blocks.fusion.alpha, blocks.fusion.beta
    ratio_s = ratio_c = 0.0

    if variant is Variant.BASELINE_FITNET:
        rec = aligned
    elif variant is Variant.NO_MASK:
        rec = mul(alpha, gen_conv(aligned, blocks.conv))
    elif variant is Variant.RANDOM_MASK:
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        spatial_shape = aligned.shape[:-3] + (1,) + aligned.shape[-2:]
        m = random_spatial_mask(spatial_shape, cfg.random_mask_ratio, rng)
        ratio_s = mask_ratio(m)
        rec = mul(alpha, gen_conv(mul(aligned, m), blocks.conv))
    else:
        masks = make_masks(dual_attention(teacher, cfg.temperature), cfg.tau_s, cfg.tau_c)
        masked_s, masked_c = apply_masks(aligned, masks)
        if variant is Variant.SPATIAL_ONLY:
            ratio_s = mask_ratio(masks.spatial)
            rec = mul(alpha, gen_conv(masked_s, blocks.conv))
        elif variant is Variant.CHANNEL_ONLY:
            ratio_c = mask_ratio(masks.channel)
            rec = mul(beta, gen_mlp(masked_c, blocks.mlp))
        else:
            ratio_s, ratio_c = mask_ratio(masks.spatial), mask_ratio(masks.channel)
            rec = fuse(gen_conv(masked_s, blocks.conv), gen_mlp(masked_c, blocks.mlp), blocks.fusion)

    return DMKDOutput(squared_error_sum(rec, teacher), rec, ratio_s, ratio_c)


def dmkd_loss(level: LevelPair, cfg: DistillConfig, blocks: LevelBlocks,
              rng: np.random.Generator | None = None) -> Tensor:
    return dmkd_forward(level, cfg, blocks, rng).loss


def overall_loss(task_loss: Tensor, level_losses: Sequence[Tensor], gamma: float) -> Tensor:
    """task_loss + gamma * sum(level_losses); gamma == 0 returns task_loss itself."""
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    if gamma == 0 or not level_losses:
        return task_loss
    total = level_losses[0]
    for extra in level_losses[1:]:
        total = add(total, extra)
    return add(task_loss, mul(gamma, total))


def active_parameters(blocks: LevelBlocks, variant: Variant) -> list[Tensor]:
    """Block parameters that the given variant's loss depends on."""
    named = blocks.named_parameters()
    if variant is Variant.BASELINE_FITNET:
        keep = ("align.",)
    elif variant in (Variant.SPATIAL_ONLY, Variant.NO_MASK, Variant.RANDOM_MASK):
        keep = ("align.", "conv.", "fusion.alpha")
    elif variant is Variant.CHANNEL_ONLY:
        keep = ("align.", "mlp.", "fusion.beta")
    else:
        keep = ("align.", "conv.", "mlp.", "fusion.")
    return [p for name, p in named.items() if name.startswith(keep)]


@dataclass
class StepStats:
    task_loss: float
    distill_loss: float
    total_loss: float
    accuracy: float
    mask_ratio_s: float = 0.0
    mask_ratio_c: float = 0.0
    level_losses: list[float] = field(default_factory=list)


def supervised_step(x: Tensor, labels: np.ndarray, student, optimizer: SGD) -> StepStats:
    """Plain cross-entropy step with no distillation term."""
    logits, _ = student(x)
    task = cross_entropy(logits, labels)
    backward(task)
    optimizer.step()
    acc = float(np.mean(np.argmax(logits.data, axis=1) == labels))
    t = task.item()
    return StepStats(task_loss=t, distill_loss=0.0, total_loss=t, accuracy=acc)


def distill_step(x: Tensor, labels: np.ndarray, teacher, student, cfg: DistillConfig,
                 blocks: Sequence[LevelBlocks], optimizer: SGD,
                 rng: np.random.Generator | None = None,
                 teacher_features: Sequence[Tensor] | None = None) -> StepStats:
    """Forward both models, add the weighted distillation term, backprop and update.

    With ``gamma == 0`` the distillation branch is skipped entirely, which makes
    the step identical to :func:`supervised_step`. ``teacher_features`` lets the
    caller pass cached teacher taps for this batch instead of re-running the
    frozen teacher.
    """
    if cfg.gamma == 0:
        return supervised_step(x, labels, student, optimizer)

    if teacher_features is None:
        with no_grad():
            _, teacher_feats = teacher(x)
    else:
        teacher_feats = list(teacher_features)
    logits, student_feats = student(x)
    if len(teacher_feats) != len(student_feats) or len(blocks) != len(student_feats):
        raise ShapeMismatch(
            f"{len(student_feats)} student levels, {len(teacher_feats)} teacher levels, {len(blocks)} block sets"
        )
    task = cross_entropy(logits, labels)
    outputs = [
        dmkd_forward(LevelPair(s, t, i), cfg, b, rng)
        for i, (s, t, b) in enumerate(zip(student_feats, teacher_feats, blocks))
    ]
    total = overall_loss(task, [o.loss for o in outputs], cfg.gamma)
    backward(total)
    optimizer.step()

    level_values = [o.loss.item() for o in outputs]
    return StepStats(
        task_loss=task.item(),
        distill_loss=float(np.sum(level_values)),
        total_loss=total.item(),
        accuracy=float(np.mean(np.argmax(logits.data, axis=1) == labels)),
        mask_ratio_s=float(np.mean([o.mask_ratio_s for o in outputs])),
        mask_ratio_c=float(np.mean([o.mask_ratio_c for o in outputs])),
        level_losses=level_values,
    )
