"""Desk-scale distributional metrics.

Sliced Wasserstein stands in for Inception-based scores, which are
meaningless on 2-D points and 8x8 blobs: project both sample sets onto
random unit directions, take the 1-D Wasserstein-2 distance between the
projected empirical distributions (sort both, root-mean-square the sorted
differences), and average over directions.
"""

from __future__ import annotations

import numpy as np

from .numerics import Rng

__all__ = ["sliced_wasserstein", "moment_gap"]


def _check_sets(a: np.ndarray, b: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"{what} expects (n, dim) sample sets")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"{what}: dimension mismatch {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError(f"{what}: need at least 2 samples per set")
    return a, b


def sliced_wasserstein(a, b, projections: int, rng: Rng) -> float:
    """Mean 1-D W2 distance over random unit projections.

    The sort-and-difference quantile pairing requires equal sample counts.
    """
    a, b = _check_sets(a, b, "sliced_wasserstein")
    if a.shape[0] != b.shape[0]:
        raise ValueError(
            f"sliced_wasserstein: sample counts must match ({a.shape[0]} vs {b.shape[0]})"
        )
    dim = a.shape[1]
    dirs = rng.normal((int(projections), dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa = np.sort(a @ dirs.T, axis=0)  # (n, P)
    pb = np.sort(b @ dirs.T, axis=0)
    w2 = np.sqrt(np.mean((pa - pb) ** 2, axis=0))
    return float(w2.mean())


def moment_gap(a, b) -> tuple[float, float]:
    """(||mean_a - mean_b||_2, ||cov_a - cov_b||_F), population covariance."""
    a, b = _check_sets(a, b, "moment_gap")
    mean_err = float(np.linalg.norm(a.mean(axis=0) - b.mean(axis=0)))
    ca = np.cov(a, rowvar=False, bias=True)
    cb = np.cov(b, rowvar=False, bias=True)
    cov_err = float(np.linalg.norm(np.atleast_2d(ca) - np.atleast_2d(cb)))
    return mean_err, cov_err
