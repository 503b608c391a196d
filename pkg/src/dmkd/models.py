"""Desk-scale teacher and student CNNs."""

from __future__ import annotations

import numpy as np

from .blocks import Module, uniform_fan_in
from .tensor import Tensor, add, conv2d, matmul, mean, no_grad, relu, reshape

TEACHER_WIDTH = 8
STUDENT_WIDTH = 4
N_CLASSES = 3


class ToyModel(Module):
    """conv3x3 -> ReLU -> conv3x3 -> ReLU (feature tap) -> global average pool -> linear."""

    def __init__(self, width: int, in_channels: int = 1, n_classes: int = N_CLASSES,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.width, self.in_channels, self.n_classes = width, in_channels, n_classes
        self.conv1_w = Tensor(uniform_fan_in(rng, (width, in_channels, 3, 3), 9 * in_channels), True, "conv1.weight")
        self.conv1_b = Tensor(np.zeros(width), True, "conv1.bias")
        self.conv2_w = Tensor(uniform_fan_in(rng, (width, width, 3, 3), 9 * width), True, "conv2.weight")
        self.conv2_b = Tensor(np.zeros(width), True, "conv2.bias")
        self.head_w = Tensor(uniform_fan_in(rng, (width, n_classes), width), True, "head.weight")
        self.head_b = Tensor(np.zeros(n_classes), True, "head.bias")

    def named_parameters(self) -> dict[str, Tensor]:
        return {
            "conv1.weight": self.conv1_w,
            "conv1.bias": self.conv1_b,
            "conv2.weight": self.conv2_w,
            "conv2.bias": self.conv2_b,
            "head.weight": self.head_w,
            "head.bias": self.head_b,
        }

    def topology(self) -> dict:
        return {"width": self.width, "in_channels": self.in_channels, "n_classes": self.n_classes}

    def freeze(self) -> "ToyModel":
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def features(self, x: Tensor) -> Tensor:
        h = relu(conv2d(x, self.conv1_w, self.conv1_b))
        return relu(conv2d(h, self.conv2_w, self.conv2_b))

    def __call__(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        """Return (logits N x K, [feature tap N x C x H x W])."""
        feat = self.features(x)
        pooled = reshape(mean(feat, (2, 3)), (feat.shape[0], self.width))
        logits = add(matmul(pooled, self.head_w), self.head_b)
        return logits, [feat]

    def predict(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Logits for a stack of images, without recording a graph."""
        out = []
        with no_grad():
            for start in range(0, len(images), batch_size):
                logits, _ = self(Tensor(images[start : start + batch_size]))
                out.append(logits.data)
        return np.concatenate(out, axis=0)


def teacher_model(rng: np.random.Generator) -> ToyModel:
    return ToyModel(TEACHER_WIDTH, rng=rng)


def student_model(rng: np.random.Generator) -> ToyModel:
    return ToyModel(STUDENT_WIDTH, rng=rng)
