"""Shared test utilities: finite-difference oracles and analytic denoisers."""

from __future__ import annotations

import numpy as np

from liftplace.diffusion import NoiseSchedule


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Elementwise central finite differences of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Normwise relative error, floored at unit scale for near-zero gradients."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(float(np.linalg.norm(numeric)), 1e-12)
    return float(np.linalg.norm(analytic - numeric)) / denom


class GaussianOracleDenoiser:
    """Posterior-mean noise predictor for 1-D data x0 ~ N(mu, s2).

    Under the forward process x_t = sqrt(abar)*x0 + sqrt(1-abar)*eps the pair
    (eps, x_t) is jointly Gaussian, and

        E[eps | x_t] = sqrt(1-abar) * (x_t - sqrt(abar)*mu) / (abar*s2 + 1-abar).

    ``test_oracle_matches_posterior_mean`` checks this against the Gaussian
    posterior-mean identity before the sampler tests rely on it.
    """

    def __init__(self, mu: float, s2: float, sched: NoiseSchedule):
        self.mu = float(mu)
        self.s2 = float(s2)
        self.sched = sched

    def __call__(self, x, t):
        abar = self.sched.alpha_bars[int(t) - 1]
        return np.sqrt(1.0 - abar) * (np.asarray(x) - np.sqrt(abar) * self.mu) / (
            abar * self.s2 + 1.0 - abar
        )


def analytic_sampler_moments(mu: float, s2: float, sched: NoiseSchedule) -> tuple[float, float]:
    """Exact (mean, variance) of the ancestral sampler's output when driven
    by GaussianOracleDenoiser, starting from x_T ~ N(0, 1).

    Each reverse step is an affine map of x_t plus independent noise, so the
    output distribution follows from a scalar recursion.
    """
    m, v = 0.0, 1.0
    for t in range(sched.total_steps, 0, -1):
        a = sched.alphas[t - 1]
        abar = sched.alpha_bars[t - 1]
        vt = abar * s2 + 1.0 - abar
        coef = (1.0 - (1.0 - a) / vt) / np.sqrt(a)
        const = (1.0 - a) * np.sqrt(abar) * mu / (vt * np.sqrt(a))
        sig2 = sched.sigmas[t - 1] ** 2 if t > 1 else 0.0
        m = coef * m + const
        v = coef * coef * v + sig2
    return float(m), float(v)
