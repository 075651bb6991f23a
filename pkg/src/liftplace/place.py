"""Error-based grouping: piecewise-local affine fitting over sorted errors.

A global affine fit treats every spatial position alike, but the
teacher-student discrepancy is spatially non-uniform. This module measures
that discrepancy as an elementwise absolute-error map, sorts each channel's
positions by error magnitude, chunks them into equal-size groups of K, and
evaluates the coarse+fine fitting loss independently per group. Easy groups
(small errors) sit first, hard groups last, and each gets its own
coefficients and its own adaptive weight.

The partition is a pure function of the current predictions and is
recomputed every training step; gradient-wise it is a constant of the step
(no gradient flows through the sorting), as are the per-group coefficients
(stop-gradient fitting, see :mod:`liftplace.kd_losses`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autodiff import detach, is_var
from .kd_losses import LossBreakdown, WeightScheduler, scheduled_weight
from .regression import VAR_FLOOR

__all__ = [
    "ErrorMap",
    "GroupPartition",
    "IndivisibleGroupSizeError",
    "error_map",
    "partition",
    "place_loss",
    "export_error_map",
    "load_error_map",
]


class IndivisibleGroupSizeError(ValueError):
    """Group size K must divide the number of positions per channel."""


@dataclass(frozen=True)
class ErrorMap:
    """Nonnegative C x H x W map of elementwise |teacher - student|."""

    values: np.ndarray

    @property
    def channel_count(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class GroupPartition:
    """Per-channel permutation of flat positions, laid out as N runs of K.

    index_map[c] is a bijection on [0, H*W): positions sorted by error
    ascending (stable, ties by flat index), so run i holds the i-th easiest
    group of K positions in channel c.
    """

    channel_count: int
    groups_per_channel: int
    group_size: int
    index_map: np.ndarray  # (C, H*W) int64

    def group_indices(self, channel: int, group: int) -> np.ndarray:
        k = self.group_size
        return self.index_map[channel, group * k : (group + 1) * k]


def _check_chw(x, what: str) -> None:
    shape = x.shape if hasattr(x, "shape") else np.shape(x)
    if len(shape) != 3:
        raise ValueError(f"{what} expects a C x H x W tensor, got shape {tuple(shape)}")


def error_map(eps_t, eps_s) -> ErrorMap:
    """Elementwise absolute difference |eps_t - eps_s| (graph-free)."""
    t = np.asarray(detach(eps_t), dtype=np.float64)
    s = np.asarray(detach(eps_s), dtype=np.float64)
    _check_chw(t, "error_map")
    if t.shape != s.shape:
        raise ValueError(f"error_map: shape mismatch {t.shape} vs {s.shape}")
    return ErrorMap(np.abs(t - s))


def partition(emap: ErrorMap, k: int) -> GroupPartition:
    """Sort each channel's positions by error and chunk into runs of K."""
    vals = emap.values
    _check_chw(vals, "partition")
    c, h, w = vals.shape
    positions = h * w
    k = int(k)
    if k < 2:
        raise ValueError(f"group size must be >= 2 (affine fit needs 2 points), got {k}")
    if positions % k != 0:
        raise IndivisibleGroupSizeError(
            f"group size {k} does not divide H*W = {positions}"
        )
    # Stable argsort on the flattened channel: equal errors keep flat-index
    # order, making partitions bit-reproducible.
    index_map = np.argsort(vals.reshape(c, positions), axis=1, kind="stable").astype(np.int64)
    return GroupPartition(c, positions // k, k, index_map)


def place_loss(
    eps_t,
    eps_s,
    k: int,
    w_policy: WeightScheduler,
    iteration: int,
    *,
    relaxed_l2: bool = False,
    pooled_w: bool = False,
):
    """Mean of the group-wise coarse+fine losses over all C*N groups.

    Builds the error map and partition from the current pair, fits OLS
    coefficients per group (constants of the step; degenerate-variance
    groups fall back to mean-matching identity-slope coefficients and are
    counted), computes each group's weight from its own coarse loss under
    the adaptive policy (or from the pooled mean when ``pooled_w``), and
    averages the per-group losses.

    Returns ``(loss, breakdowns)`` where breakdowns is one LossBreakdown per
    group in (channel-major, ascending difficulty) order. ``loss`` is a Var
    when ``eps_s`` is on a graph, else a float.
    """
    t_vals = np.asarray(detach(eps_t), dtype=np.float64)
    s_vals = np.asarray(detach(eps_s), dtype=np.float64)
    emap = error_map(t_vals, s_vals)
    part = partition(emap, k)
    c, n, kk = part.channel_count, part.groups_per_channel, part.group_size
    positions = n * kk

    # Global flat indices of every group's members: (C*N, K).
    offsets = (np.arange(c, dtype=np.int64) * positions)[:, None]
    gidx = (part.index_map + offsets).reshape(c * n, kk)

    t_groups = np.take(t_vals, gidx)  # (G, K) constants
    s_groups_val = np.take(s_vals, gidx)

    # Per-group fit from values (stop-gradient coefficients).
    mt = t_groups.mean(axis=1)
    ms = s_groups_val.mean(axis=1)
    ds = s_groups_val - ms[:, None]
    var_s = np.mean(ds * ds, axis=1)
    cov = np.mean((t_groups - mt[:, None]) * ds, axis=1)
    degenerate = var_s <= VAR_FLOOR
    safe_var = np.where(degenerate, 1.0, var_s)
    beta1 = np.where(degenerate, 1.0, cov / safe_var)
    beta0 = np.where(degenerate, mt - ms, mt - beta1 * ms)

    if relaxed_l2:
        coarse = beta0**2 + (beta1 - 1.0) ** 2
    else:
        coarse = np.abs(beta0) + np.abs(beta1 - 1.0)

    if w_policy.kind == "adaptive":
        if pooled_w:
            w = np.full(c * n, scheduled_weight(w_policy, iteration, float(coarse.mean())))
        else:
            w = 1.0 - np.minimum(1.0, coarse)
    else:
        w = np.full(c * n, scheduled_weight(w_policy, iteration))

    # Fine residuals on the graph: gather from the live eps_s.
    s_flat = eps_s.reshape((c * positions,)) if is_var(eps_s) else s_vals.reshape(c * positions)
    s_groups = s_flat.take(gidx)
    r = t_groups - (beta0[:, None] + beta1[:, None] * s_groups)
    fine = (r * r).mean(axis=1)  # (G,)
    lift_per_group = coarse + w * fine
    loss = lift_per_group.mean()

    fine_vals = fine.value if is_var(fine) else fine
    lift_vals = lift_per_group.value if is_var(lift_per_group) else lift_per_group
    breakdowns = [
        LossBreakdown(
            step=iteration,
            l_coarse=float(coarse[g]),
            l_fine=float(fine_vals[g]),
            w=float(w[g]),
            l_lift=float(lift_vals[g]),
            total=float(lift_vals[g]),
            degenerate_fallbacks=int(degenerate[g]),
        )
        for g in range(c * n)
    ]
    return (loss if is_var(loss) else float(loss)), breakdowns


def export_error_map(emap: ErrorMap, path) -> None:
    """Write the map as JSON: shape header, row-major data, per-channel
    min/max for external normalization. Values round-trip bit-exactly."""
    vals = np.asarray(emap.values, dtype=np.float64)
    _check_chw(vals, "export_error_map")
    payload = {
        "shape": list(vals.shape),
        "data": vals.ravel().tolist(),
        "channel_stats": [
            {"min": float(ch.min()), "max": float(ch.max())} for ch in vals
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_error_map(path) -> ErrorMap:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    shape = tuple(int(d) for d in obj["shape"])
    data = np.asarray(obj["data"], dtype=np.float64).reshape(shape)
    return ErrorMap(data)
