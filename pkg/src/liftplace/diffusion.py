"""DDPM forward process, ancestral sampler, and the regression-corrected
diagnostic sampler.

Timesteps are 1-based: t runs over 1..T and schedule arrays are indexed with
t-1. The reverse update is

    x_{t-1} = (x_t - ((1 - a_t) / sqrt(1 - abar_t)) * eps_hat) / sqrt(a_t)
              + sigma_t * z

with sigma_t = sqrt(beta_t) and z = 0 at t = 1.

The corrected sampler is a diagnostic, not a deployable method: at every
step it fits a scalar affine map from the student's prediction to the
teacher's over the whole sample, applies the correction, and steps with the
corrected prediction, recording the coefficients and the raw/corrected
mean-squared errors. By least-squares optimality the corrected error never
exceeds the raw one.

A "denoiser" here is anything callable as ``model(x, t) -> eps_hat`` with
matching shapes; the MLPs in :mod:`liftplace.models` qualify, as do the
analytic oracles used in tests.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .numerics import Rng, randn
from .regression import DegenerateVarianceError, RegressionCoeffs, affine_correct, ols_fit

__all__ = [
    "NoiseSchedule",
    "StepDiagnostics",
    "linear_schedule",
    "forward_noise",
    "ddpm_step",
    "sample",
    "corrected_sample",
    "write_step_diagnostics_csv",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step constants: alphas a_t, cumulative products abar_t, and the
    reverse-noise scales sigma_t = sqrt(beta_t)."""

    total_steps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigmas: np.ndarray

    def check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.total_steps:
            raise ValueError(f"t={t} outside 1..{self.total_steps}")
        return t


def linear_schedule(total_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linearly spaced betas. The classic range (1e-4, 0.02) targets T=1000;
    shorter horizons should scale beta_end up so abar_T still reaches ~0
    (the harness default uses beta_end=0.2 at T=100)."""
    total_steps = int(total_steps)
    if total_steps < 1:
        raise ValueError(f"need at least one step, got {total_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    if total_steps == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, total_steps, dtype=np.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(
        total_steps=total_steps,
        betas=betas,
        alphas=alphas,
        alpha_bars=np.cumprod(alphas),
        sigmas=np.sqrt(betas),
    )


def forward_noise(x0, t: int, eps, sched: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    t = sched.check_t(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    abar = sched.alpha_bars[t - 1]
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def ddpm_step(x_t, t: int, eps_hat, z, sched: NoiseSchedule) -> np.ndarray:
    """One reverse step given a noise prediction and the step noise z."""
    t = sched.check_t(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x_t.shape != eps_hat.shape or x_t.shape != z.shape:
        raise ValueError(
            f"shape mismatch: x_t {x_t.shape}, eps_hat {eps_hat.shape}, z {z.shape}"
        )
    if t == 1 and np.any(z != 0.0):
        raise ValueError("z must be the zero tensor at t=1")
    a = sched.alphas[t - 1]
    abar = sched.alpha_bars[t - 1]
    mean = (x_t - ((1.0 - a) / np.sqrt(1.0 - abar)) * eps_hat) / np.sqrt(a)
    return mean + sched.sigmas[t - 1] * z


def sample(model, sched: NoiseSchedule, rng: Rng, shape) -> np.ndarray:
    """Ancestral sampling: x_T ~ N(0, I), then T reverse steps with
    eps_hat = model(x_t, t). Deterministic given the rng seed."""
    x = randn(rng, shape)
    for t in range(sched.total_steps, 0, -1):
        eps_hat = np.asarray(model(x, t), dtype=np.float64)
        if eps_hat.shape != x.shape:
            raise ValueError(f"model returned shape {eps_hat.shape}, expected {x.shape}")
        z = rng.normal(x.shape) if t > 1 else np.zeros_like(x)
        x = ddpm_step(x, t, eps_hat, z, sched)
    return x


@dataclass(frozen=True)
class StepDiagnostics:
    """Per-step record of the corrected sampler."""

    t: int
    beta0: float
    beta1: float
    raw_mse: float
    corrected_mse: float
    degenerate: bool = False


def corrected_sample(
    teacher,
    student,
    sched: NoiseSchedule,
    rng: Rng,
    shape,
    *,
    per_channel: bool = False,
) -> tuple[np.ndarray, list[StepDiagnostics]]:
    """Sample with the student while affine-correcting each prediction
    toward the teacher's.

    ``shape`` is a single sample (no batch axis). The fit spans all elements
    jointly; ``per_channel=True`` instead fits each leading-axis slice
    separately (only meaningful for C x H x W shapes) and reports
    element-weighted average coefficients. A degenerate student variance at
    some step falls back to the uncorrected prediction for that step and is
    flagged in the diagnostics.
    """
    x = randn(rng, shape)
    diags: list[StepDiagnostics] = []
    for t in range(sched.total_steps, 0, -1):
        eps_t = np.asarray(teacher(x, t), dtype=np.float64)
        eps_s = np.asarray(student(x, t), dtype=np.float64)
        degenerate = False
        if per_channel:
            if eps_s.ndim != 3:
                raise ValueError("per_channel fitting expects a C x H x W sample")
            corrected = np.empty_like(eps_s)
            b0s, b1s = [], []
            for c in range(eps_s.shape[0]):
                try:
                    coeffs = ols_fit(eps_t[c], eps_s[c])
                except DegenerateVarianceError:
                    coeffs = RegressionCoeffs(0.0, 1.0)
                    degenerate = True
                corrected[c] = affine_correct(eps_s[c], coeffs)
                b0s.append(coeffs.beta0)
                b1s.append(coeffs.beta1)
            beta0, beta1 = float(np.mean(b0s)), float(np.mean(b1s))
        else:
            try:
                coeffs = ols_fit(eps_t, eps_s)
            except DegenerateVarianceError:
                coeffs = RegressionCoeffs(0.0, 1.0)
                degenerate = True
            corrected = affine_correct(eps_s, coeffs)
            beta0, beta1 = coeffs.beta0, coeffs.beta1
        raw_mse = float(np.mean((eps_t - eps_s) ** 2))
        corrected_mse = float(np.mean((eps_t - corrected) ** 2))
        diags.append(StepDiagnostics(t, beta0, beta1, raw_mse, corrected_mse, degenerate))
        z = rng.normal(x.shape) if t > 1 else np.zeros_like(x)
        x = ddpm_step(x, t, corrected, z, sched)
    return x, diags


def write_step_diagnostics_csv(diags: list[StepDiagnostics], path) -> None:
    """CSV rows (t, beta0, beta1, raw_mse, corrected_mse), one per step."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "beta0", "beta1", "raw_mse", "corrected_mse"])
        for d in diags:
            writer.writerow([d.t, repr(d.beta0), repr(d.beta1), repr(d.raw_mse), repr(d.corrected_mse)])
