"""Learnable pieces of the distiller: channel alignment, the two generative
blocks that reconstruct teacher features from masked student features, and
the learnable pair of fusion weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .tensor import Tensor, add, conv2d, gelu, layer_norm, matmul, mul, relu, reshape, transpose


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _param(data, name: str) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Module:
    """Anything holding named parameters."""

    def named_parameters(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


class AlignLayer(Module):
    """1x1 convolution mapping student channels onto teacher channels."""

    def __init__(self, c_student: int, c_teacher: int, rng: np.random.Generator | None = None,
                 passthrough: bool = False):
        if passthrough and c_student != c_teacher:
            raise ShapeMismatch(f"passthrough alignment needs equal channels, got {c_student} -> {c_teacher}")
        self.c_student, self.c_teacher = c_student, c_teacher
        self.passthrough = passthrough
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = _param(uniform_fan_in(rng, (c_teacher, c_student, 1, 1), c_student), "align.weight")
        self.bias = _param(np.zeros(c_teacher), "align.bias")

    def named_parameters(self):
        if self.passthrough:
            return {}
        return {"align.weight": self.weight, "align.bias": self.bias}

    def __call__(self, student: Tensor) -> Tensor:
        return align(student, self)


def align(student: Tensor, layer: AlignLayer) -> Tensor:
    if student.ndim not in (3, 4) or student.shape[-3] != layer.c_student:
        raise ShapeMismatch(f"align expects {layer.c_student} student channels, got shape {student.shape}")
    if layer.passthrough:
        return student
    return conv2d(student, layer.weight, layer.bias)


class ConvGenBlock(Module):
    """conv3x3 -> ReLU -> conv3x3, shape preserving."""

    def __init__(self, channels: int, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        c = channels
        self.channels = c
        self.w1 = _param(uniform_fan_in(rng, (c, c, 3, 3), 9 * c), "conv.w1")
        self.b1 = _param(np.zeros(c), "conv.b1")
        self.w2 = _param(uniform_fan_in(rng, (c, c, 3, 3), 9 * c), "conv.w2")
        self.b2 = _param(np.zeros(c), "conv.b2")

    def named_parameters(self):
        return {"conv.w1": self.w1, "conv.b1": self.b1, "conv.w2": self.w2, "conv.b2": self.b2}

    def __call__(self, x: Tensor) -> Tensor:
        return gen_conv(x, self)


def gen_conv(masked: Tensor, block: ConvGenBlock) -> Tensor:
    if masked.ndim not in (3, 4) or masked.shape[-3] != block.channels:
        raise ShapeMismatch(f"conv block for {block.channels} channels got {masked.shape}")
    hidden = relu(conv2d(masked, block.w1, block.b1))
    return conv2d(hidden, block.w2, block.b2)


class MlpGenBlock(Module):
    """Per-position channel MLP: C -> 2C -> GELU -> C -> LayerNorm."""

    def __init__(self, channels: int, rng: np.random.Generator | None = None, eps: float = 1e-5):
        rng = rng if rng is not None else np.random.default_rng(0)
        c = channels
        self.channels = c
        self.eps = eps
        self.proj1 = _param(uniform_fan_in(rng, (c, 2 * c), c), "mlp.proj1")
        self.bias1 = _param(np.zeros(2 * c), "mlp.bias1")
        self.proj2 = _param(uniform_fan_in(rng, (2 * c, c), 2 * c), "mlp.proj2")
        self.bias2 = _param(np.zeros(c), "mlp.bias2")
        self.ln_gain = _param(np.ones(c), "mlp.ln_gain")
        self.ln_bias = _param(np.zeros(c), "mlp.ln_bias")

    @staticmethod
    def expected_num_parameters(c: int) -> int:
        return c * 2 * c + 2 * c + 2 * c * c + c + 2 * c

    def named_parameters(self):
        return {
            "mlp.proj1": self.proj1,
            "mlp.bias1": self.bias1,
            "mlp.proj2": self.proj2,
            "mlp.bias2": self.bias2,
            "mlp.ln_gain": self.ln_gain,
            "mlp.ln_bias": self.ln_bias,
        }

    def __call__(self, x: Tensor) -> Tensor:
        return gen_mlp(x, self)


def gen_mlp(masked: Tensor, block: MlpGenBlock) -> Tensor:
    if masked.ndim not in (3, 4) or masked.shape[-3] != block.channels:
        raise ShapeMismatch(f"MLP block for {block.channels} channels got {masked.shape}")
    c = block.channels
    if masked.ndim == 3:
        to_last, from_last = (1, 2, 0), (2, 0, 1)
    else:
        to_last, from_last = (0, 2, 3, 1), (0, 3, 1, 2)
    channels_last = transpose(masked, to_last)
    lead = channels_last.shape[:-1]
    rows = reshape(channels_last, (-1, c))
    hidden = gelu(add(matmul(rows, block.proj1), block.bias1))
    out = add(matmul(hidden, block.proj2), block.bias2)
    out = layer_norm(out, block.ln_gain, block.ln_bias, block.eps)
    return transpose(reshape(out, lead + (c,)), from_last)


class FusionWeights(Module):
    def __init__(self, alpha: float = 0.5, beta: float = 0.5):
        self.alpha = _param(alpha, "fusion.alpha")
        self.beta = _param(beta, "fusion.beta")

    def named_parameters(self):
        return {"fusion.alpha": self.alpha, "fusion.beta": self.beta}


def fuse(rec_spatial: Tensor, rec_channel: Tensor, w: FusionWeights) -> Tensor:
    """alpha * rec_spatial + beta * rec_channel."""
    if rec_spatial.shape != rec_channel.shape:
        raise ShapeMismatch(f"fuse {rec_spatial.shape} with {rec_channel.shape}")
    return add(mul(w.alpha, rec_spatial), mul(w.beta, rec_channel))


@dataclass
class LevelBlocks(Module):
    """Everything learnable that one distillation level owns."""

    align: AlignLayer
    conv: ConvGenBlock
    mlp: MlpGenBlock
    fusion: FusionWeights

    @classmethod
    def create(cls, c_student: int, c_teacher: int, rng: np.random.Generator,
               alpha: float = 0.5, beta: float = 0.5) -> "LevelBlocks":
        return cls(
            align=AlignLayer(c_student, c_teacher, rng),
            conv=ConvGenBlock(c_teacher, rng),
            mlp=MlpGenBlock(c_teacher, rng),
            fusion=FusionWeights(alpha, beta),
        )

    def named_parameters(self):
        out = {}
        for part in (self.align, self.conv, self.mlp, self.fusion):
            out.update(part.named_parameters())
        return out
