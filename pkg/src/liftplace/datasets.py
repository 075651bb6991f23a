"""Toy datasets for the distillation experiments.

Three kinds, all roughly unit scale so the forward process ends near N(0, I):

* ``gaussians8``    — the classic ring of eight Gaussians (2-D).
* ``swissroll``     — a 2-D swiss roll, rescaled to ~unit radius.
* ``grid-patterns`` — 1x8x8 images of one to three random smooth blobs,
                      stored flattened; their grid shape gives the grouping
                      loss genuine spatial non-uniformity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Rng

__all__ = ["Dataset", "make_dataset", "DATASET_KINDS"]

DATASET_KINDS = ("gaussians8", "swissroll", "grid-patterns")


@dataclass(frozen=True)
class Dataset:
    kind: str
    samples: np.ndarray  # (n, dim) float64
    grid_shape: tuple[int, int, int] | None = None  # set for image-like data

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def __len__(self) -> int:
        return self.samples.shape[0]


def _gaussians8(rng: Rng, n: int) -> np.ndarray:
    angles = np.arange(8) * (2.0 * np.pi / 8.0)
    centers = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    which = rng.integers(0, 8, n)
    return centers[which] + 0.05 * rng.normal((n, 2))


def _swissroll(rng: Rng, n: int) -> np.ndarray:
    u = rng.uniform(0.0, 1.0, (n,))
    theta = 1.5 * np.pi * (1.0 + 2.0 * u)
    pts = np.stack([theta * np.cos(theta), theta * np.sin(theta)], axis=1)
    pts /= 4.5 * np.pi  # max radius ~1
    return pts + 0.01 * rng.normal((n, 2))


def _grid_patterns(rng: Rng, n: int, size: int = 8) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    out = np.zeros((n, size * size))
    for i in range(n):
        img = np.zeros((size, size))
        for _ in range(int(rng.integers(1, 4))):
            cy, cx = rng.uniform(0.0, size - 1.0, (2,))
            sigma = rng.uniform(1.0, 2.5, (1,))[0]
            amp = rng.uniform(0.5, 1.0, (1,))[0] * (1.0 if rng.uniform(0, 1, (1,))[0] < 0.5 else -1.0)
            img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))
        out[i] = img.ravel()
    return out


def make_dataset(kind: str, n: int, rng: Rng) -> Dataset:
    if n < 1:
        raise ValueError(f"need at least one sample, got {n}")
    if kind == "gaussians8":
        return Dataset(kind, _gaussians8(rng, n))
    if kind == "swissroll":
        return Dataset(kind, _swissroll(rng, n))
    if kind == "grid-patterns":
        return Dataset(kind, _grid_patterns(rng, n), grid_shape=(1, 8, 8))
    raise ValueError(f"unknown dataset kind {kind!r}; choose from {DATASET_KINDS}")
