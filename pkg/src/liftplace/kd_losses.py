"""Distillation losses and the coarse-to-fine weighting that combines them.

The menu:

* ``outkd_loss``    — MSE between teacher and student noise predictions.
* ``featkd_loss``   — MSE between teacher features and a learned linear map
                      of student features.
* ``coarse_loss``   — |b0| + |b1 - 1| on fitted regression coefficients
                      (optionally the l2 relaxation b0^2 + (b1-1)^2). Zero
                      iff the fit is already the identity, i.e. the low-order
                      moments of the two predictions agree.
* ``fine_loss``     — MSE of the affine-corrected residual for given
                      coefficients; with OLS coefficients this is the part
                      of the teacher the student cannot reach by any scalar
                      affine adjustment.
* ``lift_loss``     — coarse + w * fine with internally fitted OLS
                      coefficients.
* ``scheduled_weight`` / ``adaptive_weight`` — the w schedule: adaptive
  (1 - min(1, coarse)), linear, cosine, or fixed.

All losses reduce by the mean over elements so the lambda weights in the
training objective are resolution-independent.

Gradient contract: every loss accepts plain ndarrays (returns float) or
autodiff Vars (returns a Var wired into the caller's graph). For
``lift_loss`` the coefficients are treated as constants of the current batch
by default (``coeff_grad="stop"``): the coarse term then carries no gradient
and influences training only through the adaptive weight (and, under
grouping, through the per-step refit). ``coeff_grad="full"`` instead
differentiates through the closed-form fit, including the coarse term. The
weight ``w`` is always a plain number supplied by the caller, never a graph
node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Var, absolute, detach, is_var
from .regression import DegenerateVarianceError, RegressionCoeffs, VAR_FLOOR, ols_fit

__all__ = [
    "WeightScheduler",
    "LossBreakdown",
    "outkd_loss",
    "featkd_loss",
    "coarse_loss",
    "fine_loss",
    "adaptive_weight",
    "scheduled_weight",
    "lift_loss",
]


# ---------------------------------------------------------------------------
# weighting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightScheduler:
    """Policy for the fine-term weight w in [0, 1].

    kind: "adaptive" | "linear" | "cosine" | "fixed".
    total_iters: required for linear/cosine (the I in w = i/I).
    value: required for fixed.
    """

    kind: str
    total_iters: int | None = None
    value: float | None = None

    def __post_init__(self):
        if self.kind not in ("adaptive", "linear", "cosine", "fixed"):
            raise ValueError(f"unknown scheduler kind {self.kind!r}")
        if self.kind in ("linear", "cosine"):
            if self.total_iters is None or self.total_iters < 1:
                raise ValueError(f"{self.kind} scheduler needs total_iters >= 1")
        if self.kind == "fixed":
            if self.value is None or not 0.0 <= self.value <= 1.0:
                raise ValueError("fixed scheduler needs a value in [0, 1]")

    @classmethod
    def adaptive(cls) -> "WeightScheduler":
        return cls("adaptive")

    @classmethod
    def linear(cls, total_iters: int) -> "WeightScheduler":
        return cls("linear", total_iters=total_iters)

    @classmethod
    def cosine(cls, total_iters: int) -> "WeightScheduler":
        return cls("cosine", total_iters=total_iters)

    @classmethod
    def fixed(cls, value: float) -> "WeightScheduler":
        return cls("fixed", value=value)


def adaptive_weight(l_coarse: float) -> float:
    """w = 1 - min(1, L_coarse): fully gate the fine term until the
    coefficients approach the identity."""
    l_coarse = float(l_coarse)
    if l_coarse < 0.0:
        raise ValueError(f"coarse loss must be nonnegative, got {l_coarse}")
    return 1.0 - min(1.0, l_coarse)


def _cospi(x: float) -> float:
    # cos(pi*x) following the IEEE cosPi convention: exact at multiples of
    # 1/2, so schedule endpoints and midpoint come out exactly 0, 1/2, 1.
    half_steps = 2.0 * x
    n = round(half_steps)
    if half_steps == n:
        return (1.0, 0.0, -1.0, 0.0)[int(n) % 4]
    return math.cos(math.pi * x)


def scheduled_weight(sched: WeightScheduler, iteration: int, l_coarse: float = 0.0) -> float:
    """Evaluate the policy at an iteration (adaptive uses l_coarse instead)."""
    if sched.kind == "adaptive":
        return adaptive_weight(l_coarse)
    if sched.kind == "fixed":
        return min(1.0, max(0.0, sched.value))
    total = sched.total_iters
    if not 0 <= iteration <= total:
        raise ValueError(f"iteration {iteration} outside [0, {total}]")
    if sched.kind == "linear":
        return iteration / total
    # cosine
    return 0.5 * (1.0 - _cospi(iteration / total))


# ---------------------------------------------------------------------------
# bookkeeping record
# ---------------------------------------------------------------------------

@dataclass
class LossBreakdown:
    """One row of loss accounting (a training step, or one group under
    grouped fitting). ``total`` is the lambda-weighted sum of whichever
    components are active."""

    step: int
    l_diff: float = 0.0
    l_outkd: float = 0.0
    l_featkd: float = 0.0
    l_coarse: float = 0.0
    l_fine: float = 0.0
    w: float = 0.0
    l_lift: float = 0.0
    total: float = 0.0
    degenerate_fallbacks: int = 0


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _check_same_shape(a, b, what: str):
    sa = a.shape if hasattr(a, "shape") else np.shape(a)
    sb = b.shape if hasattr(b, "shape") else np.shape(b)
    if tuple(sa) != tuple(sb):
        raise ValueError(f"{what}: shape mismatch {tuple(sa)} vs {tuple(sb)}")


def _scalar(x):
    """Plain float for ndarray results; Var results pass through."""
    return x if is_var(x) else float(x)


def outkd_loss(eps_t, eps_s):
    """Mean squared error between teacher and student predictions."""
    _check_same_shape(eps_t, eps_s, "outkd_loss")
    d = eps_t - eps_s
    return _scalar((d * d).mean())


def featkd_loss(f_t, f_s, regressor):
    """MSE between teacher features and regressor(student features).

    ``regressor`` maps the student feature dimension (last axis of f_s) to
    the teacher's; gradients flow into both the student features and the
    regressor parameters when either is on a graph.
    """
    mapped = regressor.apply(f_s)
    _check_same_shape(f_t, mapped, "featkd_loss (after regressor)")
    d = f_t - mapped
    return _scalar((d * d).mean())


def coarse_loss(coeffs: RegressionCoeffs, relaxed_l2: bool = False) -> float:
    """Distance of the fitted coefficients from the identity map (0, 1)."""
    b0, b1 = float(coeffs.beta0), float(coeffs.beta1)
    if not (math.isfinite(b0) and math.isfinite(b1)):
        raise ValueError(f"non-finite coefficients {(b0, b1)}")
    if relaxed_l2:
        return b0 * b0 + (b1 - 1.0) ** 2
    return abs(b0) + abs(b1 - 1.0)


def fine_loss(eps_t, eps_s, coeffs: RegressionCoeffs):
    """MSE of the affine-corrected residual, coefficients held fixed."""
    _check_same_shape(eps_t, eps_s, "fine_loss")
    r = eps_t - (coeffs.beta0 + coeffs.beta1 * eps_s)
    return _scalar((r * r).mean())


def _graph_fit(eps_t, eps_s):
    """OLS coefficients as graph nodes (differentiable through mean/cov/var)."""
    t = detach(eps_t)  # teacher side is a constant of the step
    n = t.size
    mt = float(t.mean())
    ms = eps_s.mean() if is_var(eps_s) else float(np.mean(eps_s))
    flat_s = eps_s.reshape((n,)) if is_var(eps_s) else np.asarray(eps_s).reshape(n)
    ds = flat_s - ms
    var_s = (ds * ds).mean()
    var_value = float(var_s.value if is_var(var_s) else var_s)
    if var_value <= VAR_FLOOR:
        ms_val = float(ms.value if is_var(ms) else ms)
        raise DegenerateVarianceError(var_value, RegressionCoeffs(mt - ms_val, 1.0))
    cov = ((t.reshape(n) - mt) * ds).mean()
    beta1 = cov / var_s
    beta0 = mt - beta1 * ms
    return beta0, beta1


def lift_loss(eps_t, eps_s, w: float, relaxed_l2: bool = False, coeff_grad: str = "stop"):
    """Coarse + w * fine with internally fitted OLS coefficients.

    Returns ``(loss, coeffs)``. Propagates DegenerateVarianceError from the
    fit so the caller decides the fallback policy. See the module docstring
    for the ``coeff_grad`` gradient contract.
    """
    _check_same_shape(eps_t, eps_s, "lift_loss")
    w = float(w)
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"w must lie in [0, 1], got {w}")
    if coeff_grad not in ("stop", "full"):
        raise ValueError(f"coeff_grad must be 'stop' or 'full', got {coeff_grad!r}")

    if coeff_grad == "full" and is_var(eps_s):
        b0, b1 = _graph_fit(eps_t, eps_s)
        if relaxed_l2:
            coarse = b0 * b0 + (b1 - 1.0) * (b1 - 1.0)
        else:
            coarse = absolute(b0) + absolute(b1 - 1.0)
        r = eps_t - (b0 + b1 * eps_s)
        fine = (r * r).mean()
        loss = coarse + w * fine
        coeffs = RegressionCoeffs(float(b0.value), float(b1.value))
        return loss, coeffs

    coeffs = ols_fit(detach(eps_t), detach(eps_s))
    coarse = coarse_loss(coeffs, relaxed_l2)
    fine = fine_loss(eps_t, eps_s, coeffs)
    loss = coarse + w * fine
    return _scalar(loss), coeffs
