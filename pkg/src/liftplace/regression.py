"""Closed-form scalar affine regression between two equally-shaped tensors.

The whole coarse-to-fine machinery rests on fitting ``target ~ b0 + b1 *
source`` over all elements of a tensor pair by ordinary least squares:

    b1 = Cov[target, source] / Var[source]
    b0 = mean(target) - b1 * mean(source)

with population moments (divisor n, see :mod:`liftplace.numerics`). The fit
minimizes ``||target - (b0 + b1*source)||^2`` over all scalar affine maps, so
the corrected residual never exceeds the raw one; the test suite leans on
that optimality repeatedly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["RegressionCoeffs", "DegenerateVarianceError", "VAR_FLOOR", "ols_fit", "affine_correct"]

# Below this source variance the slope is numerically meaningless; callers
# get an explicit error carrying mean-matching identity-slope coefficients
# they may opt into.
VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class RegressionCoeffs:
    """Intercept/slope pair of one affine fit (global, per-sample, or per-group)."""

    beta0: float
    beta1: float

    def as_tuple(self) -> tuple[float, float]:
        return (self.beta0, self.beta1)


class DegenerateVarianceError(ValueError):
    """Source variance at or below VAR_FLOOR; carries fallback coefficients.

    The fallback keeps the identity slope and matches means:
    ``beta1 = 1, beta0 = mean(target) - mean(source)``. In particular a
    constant pair with ``target == source`` falls back to (0, 1) and incurs
    zero loss.
    """

    def __init__(self, variance: float, fallback: RegressionCoeffs):
        super().__init__(
            f"source variance {variance:.3e} <= {VAR_FLOOR:.0e}; "
            f"fallback coefficients {fallback.as_tuple()}"
        )
        self.variance = variance
        self.fallback = fallback


def ols_fit(target, source, *, var_floor: float = VAR_FLOOR) -> RegressionCoeffs:
    """Fit ``target ~ b0 + b1*source`` elementwise over the whole tensors.

    Raises DegenerateVarianceError when Var[source] <= var_floor and
    ValueError on shape mismatch or fewer than two elements.
    """
    t = np.asarray(target, dtype=np.float64)
    s = np.asarray(source, dtype=np.float64)
    if t.shape != s.shape:
        raise ValueError(f"shape mismatch: target {t.shape} vs source {s.shape}")
    if t.size < 2:
        raise ValueError(f"need at least 2 elements to fit, got {t.size}")
    mt = t.mean()
    ms = s.mean()
    ds = s - ms
    var_s = float(np.mean(ds * ds))
    if var_s <= var_floor:
        raise DegenerateVarianceError(var_s, RegressionCoeffs(float(mt - ms), 1.0))
    cov = float(np.mean((t - mt) * ds))
    beta1 = cov / var_s
    beta0 = float(mt - beta1 * ms)
    return RegressionCoeffs(beta0, beta1)


def affine_correct(source, coeffs: RegressionCoeffs) -> np.ndarray:
    """Apply ``b0 + b1*source`` elementwise (same shape as the input)."""
    if not (np.isfinite(coeffs.beta0) and np.isfinite(coeffs.beta1)):
        raise ValueError(f"non-finite coefficients {coeffs.as_tuple()}")
    s = np.asarray(source, dtype=np.float64)
    return coeffs.beta0 + coeffs.beta1 * s
