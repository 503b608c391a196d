"""Synthetic three-class image task: blob, horizontal bar, cross."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

SIZE = 16
NOISE_STD = 0.05
MIN_CONTRAST = 0.5
CLASS_NAMES = ("blob", "horizontal-bar", "cross")


@dataclass
class SyntheticDataset:
    train_images: np.ndarray  # N x 1 x 16 x 16, float64 in [0, 1]
    train_labels: np.ndarray  # N, int64 in {0, 1, 2}
    test_images: np.ndarray
    test_labels: np.ndarray
    seed: int

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            np.savez(
                fh,
                train_images=self.train_images,
                train_labels=self.train_labels,
                test_images=self.test_images,
                test_labels=self.test_labels,
                seed=np.int64(self.seed),
            )

    @classmethod
    def load(cls, path: str | Path) -> "SyntheticDataset":
        with np.load(path) as z:
            return cls(
                train_images=z["train_images"],
                train_labels=z["train_labels"],
                test_images=z["test_images"],
                test_labels=z["test_labels"],
                seed=int(z["seed"]),
            )


def _blob(rng: np.random.Generator) -> np.ndarray:
    cy, cx = rng.uniform(3.0, 12.0, size=2)
    sigma = rng.uniform(0.8, 1.8)
    amp = rng.uniform(MIN_CONTRAST, 1.0)
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    return amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))


def _hbar(rng: np.random.Generator) -> np.ndarray:
    img = np.zeros((SIZE, SIZE))
    length = int(rng.integers(4, 11))
    y = int(rng.integers(1, SIZE - 1))
    x0 = int(rng.integers(0, SIZE - length))
    img[y, x0 : x0 + length] = rng.uniform(MIN_CONTRAST, 1.0)
    return img


def _cross(rng: np.random.Generator) -> np.ndarray:
    img = np.zeros((SIZE, SIZE))
    arm = int(rng.integers(2, 4))
    cy, cx = (int(v) for v in rng.integers(arm, SIZE - arm, size=2))
    amp = rng.uniform(MIN_CONTRAST, 1.0)
    img[cy, cx - arm : cx + arm + 1] = amp
    img[cy - arm : cy + arm + 1, cx] = amp
    return img


_DRAW = (_blob, _hbar, _cross)


def _split(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    labels = rng.permutation(np.arange(n) % len(_DRAW)).astype(np.int64)
    images = np.empty((n, 1, SIZE, SIZE))
    for i, label in enumerate(labels):
        clean = _DRAW[label](rng)
        images[i, 0] = np.clip(clean + rng.normal(0.0, NOISE_STD, size=clean.shape), 0.0, 1.0)
    return images, labels


def generate_dataset(seed: int, n_train: int = 1024, n_test: int = 256) -> SyntheticDataset:
    if n_train <= 0 or n_test <= 0:
        raise ValueError(f"split sizes must be positive, got {n_train}/{n_test}")
    rng = np.random.default_rng(seed)
    train_images, train_labels = _split(rng, n_train)
    test_images, test_labels = _split(rng, n_test)
    return SyntheticDataset(train_images, train_labels, test_images, test_labels, seed)
