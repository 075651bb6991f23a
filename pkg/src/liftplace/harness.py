"""Training harness: teacher pretraining, student distillation with a
configurable loss stack, and the multi-seed capacity-gap experiment.

Everything is deterministic given the config: the dataset derives from the
config seed, and each run's randomness derives from one root Rng via named
child streams, so two invocations with identical configs produce
byte-identical logs.

The total training objective is

    total = lambda_diff * L_diff
          + lambda_outkd * L_outKD          (if enabled)
          + lambda_lift * L_fit             (global or grouped, if enabled)
          + lambda_featkd * L_featKD        (if enabled)

where L_diff is by default the teacher-matching MSE (``diff_target =
"teacher"``) and can be switched to the sampled ground-truth noise
(``diff_target = "noise"``). Disabling terms via flags/lambdas reduces the
run exactly to the simpler baselines (plain fine-tuning, output KD, output
plus feature KD), which the tests check against standalone computations.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .autodiff import Var, backward
from .datasets import DATASET_KINDS, Dataset, make_dataset
from .diffusion import linear_schedule, sample
from .kd_losses import (
    LossBreakdown,
    WeightScheduler,
    coarse_loss,
    featkd_loss,
    fine_loss,
    lift_loss,
    outkd_loss,
    scheduled_weight,
)
from .metrics import moment_gap, sliced_wasserstein
from .models import AdamState, LinearMap, MLPDenoiser, adam_step, save_checkpoint
from .numerics import Rng
from .place import place_loss
from .regression import DegenerateVarianceError, ols_fit

__all__ = [
    "HarnessConfig",
    "RunReport",
    "DivergenceError",
    "LossStack",
    "METHOD_PRESETS",
    "train_teacher",
    "distill",
    "capacity_gap_experiment",
    "scheduler_ablation",
    "write_run_csv",
    "write_capacity_csv",
    "write_scheduler_csv",
]

METHOD_PRESETS = {
    "wo_kd": dict(use_outkd=False, use_featkd=False, use_lift=False, use_place=False),
    "outkd": dict(use_outkd=True, use_featkd=False, use_lift=False, use_place=False),
    "featkd": dict(use_outkd=False, use_featkd=True, use_lift=False, use_place=False),
    "outkd_featkd": dict(use_outkd=True, use_featkd=True, use_lift=False, use_place=False),
    "lift": dict(use_outkd=False, use_featkd=False, use_lift=True, use_place=False),
    "lift_place": dict(use_outkd=False, use_featkd=False, use_lift=True, use_place=True),
}


@dataclass
class HarnessConfig:
    """Flat, TOML-serializable experiment configuration."""

    # data
    dataset: str = "gaussians8"
    sample_count: int = 10000
    # noise schedule (beta_end chosen so abar_T ~ 0 at the short toy horizon)
    total_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.2
    # architectures
    teacher_widths: list[int] = field(default_factory=lambda: [256, 256, 256])
    student_widths: list[int] = field(default_factory=lambda: [64, 64])
    # loss stack
    use_outkd: bool = False
    use_featkd: bool = False
    use_lift: bool = False
    use_place: bool = False
    lambda_diff: float = 1.0
    lambda_outkd: float = 1.0
    lambda_lift: float = 1.0
    lambda_featkd: float = 1e-6
    group_size: int = 16
    scheduler: str = "adaptive"  # adaptive | linear | cosine | fixed
    scheduler_total_iters: int = 0  # 0 -> use `iterations`
    fixed_weight: float = 1.0
    relaxed_l2: bool = False
    coeff_grad: str = "stop"  # stop | full
    diff_target: str = "teacher"  # teacher | noise
    feat_layer: int = -1
    pooled_w: bool = False
    adaptive_ema: float = 0.0  # 0 -> instantaneous batch coarse loss
    # optimization
    iterations: int = 2000
    teacher_iterations: int = 5000
    batch_size: int = 128
    lr: float = 2e-4
    teacher_lr: float = 1e-3
    # reproducibility
    seed: int = 0
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    # evaluation
    eval_samples: int = 2048
    sw_projections: int = 128
    # capacity-gap grid
    capacity_teacher_widths: list[list[int]] = field(default_factory=lambda: [[256, 256, 256]])
    capacity_student_widths: list[list[int]] = field(default_factory=lambda: [[4, 4]])
    capacity_methods: list[str] = field(default_factory=lambda: ["outkd", "lift_place"])
    # checkpoints consumed by the CLI ("" -> train/initialize fresh)
    teacher_checkpoint: str = ""
    student_checkpoint: str = ""
    # timestep at which the error-map command probes the models (0 -> T // 2)
    error_map_t: int = 0

    # -- validation ------------------------------------------------------
    def validate(self) -> None:
        def bad(name, why):
            raise ValueError(f"invalid config field {name!r}: {why}")

        if self.dataset not in DATASET_KINDS:
            bad("dataset", f"{self.dataset!r} not in {DATASET_KINDS}")
        if self.sample_count < 2:
            bad("sample_count", "need at least 2 samples")
        if self.total_steps < 1:
            bad("total_steps", "need at least one diffusion step")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            bad("beta_start/beta_end", "need 0 < beta_start <= beta_end < 1")
        if not self.teacher_widths or any(w < 1 for w in self.teacher_widths):
            bad("teacher_widths", "need a non-empty list of positive widths")
        if not self.student_widths or any(w < 1 for w in self.student_widths):
            bad("student_widths", "need a non-empty list of positive widths")
        for name in ("lambda_diff", "lambda_outkd", "lambda_lift", "lambda_featkd"):
            if getattr(self, name) < 0.0:
                bad(name, "lambda weights must be nonnegative")
        if self.group_size < 2:
            bad("group_size", "group size must be >= 2")
        if self.scheduler not in ("adaptive", "linear", "cosine", "fixed"):
            bad("scheduler", f"unknown kind {self.scheduler!r}")
        if self.scheduler == "fixed" and not 0.0 <= self.fixed_weight <= 1.0:
            bad("fixed_weight", "must lie in [0, 1]")
        if self.scheduler_total_iters < 0:
            bad("scheduler_total_iters", "must be >= 0 (0 means use iterations)")
        if self.coeff_grad not in ("stop", "full"):
            bad("coeff_grad", "must be 'stop' or 'full'")
        if self.diff_target not in ("teacher", "noise"):
            bad("diff_target", "must be 'teacher' or 'noise'")
        if not 0.0 <= self.adaptive_ema < 1.0:
            bad("adaptive_ema", "must lie in [0, 1)")
        if self.iterations < 1:
            bad("iterations", "must be >= 1")
        if self.teacher_iterations < 0:
            bad("teacher_iterations", "must be >= 0")
        if self.batch_size < 1:
            bad("batch_size", "must be >= 1")
        if self.lr <= 0 or self.teacher_lr <= 0:
            bad("lr/teacher_lr", "learning rates must be positive")
        if not self.seeds:
            bad("seeds", "need at least one seed")
        if self.eval_samples < 2 or self.eval_samples > self.sample_count:
            bad("eval_samples", "need 2 <= eval_samples <= sample_count")
        if self.sw_projections < 1:
            bad("sw_projections", "need at least one projection")
        if self.use_place:
            positions = 64 if self.dataset == "grid-patterns" else self.batch_size * 2
            if positions % self.group_size != 0:
                bad(
                    "group_size",
                    f"must divide the {positions} positions per channel "
                    f"({'8x8 grid' if self.dataset == 'grid-patterns' else 'batch_size * dim'})",
                )
        for m in self.capacity_methods:
            if m not in METHOD_PRESETS:
                bad("capacity_methods", f"{m!r} not in {sorted(METHOD_PRESETS)}")
        if self.error_map_t < 0 or self.error_map_t > self.total_steps:
            bad("error_map_t", "must lie in [0, total_steps] (0 means T // 2)")

    def weight_scheduler(self) -> WeightScheduler:
        total = self.scheduler_total_iters or self.iterations
        if self.scheduler == "adaptive":
            return WeightScheduler.adaptive()
        if self.scheduler == "linear":
            return WeightScheduler.linear(total)
        if self.scheduler == "cosine":
            return WeightScheduler.cosine(total)
        return WeightScheduler.fixed(self.fixed_weight)


@dataclass
class RunReport:
    """Everything one distillation run logged."""

    seed: int
    steps: list[LossBreakdown]
    grad_norms: list[float]
    final_sw: float
    mean_err: float
    cov_err: float
    wall_clock: float
    diverged: bool = False


class DivergenceError(RuntimeError):
    """Loss became non-finite; carries the step index and any partial report."""

    def __init__(self, step: int, report: RunReport | None = None):
        super().__init__(f"training diverged (non-finite loss) at step {step}")
        self.step = step
        self.report = report


# ---------------------------------------------------------------------------
# loss assembly
# ---------------------------------------------------------------------------

def _val(x) -> float:
    return float(x.value) if isinstance(x, Var) else float(x)


class LossStack:
    """Assembles the configured objective for one training step.

    Holds the weight policy and the optional EMA of the coarse loss used by
    the adaptive weight. ``evaluate`` returns ``(total, l_diff_node,
    breakdown)`` where the first two are graph nodes when the student
    prediction is one.
    """

    def __init__(self, cfg: HarnessConfig, grid_shape: tuple[int, int, int] | None):
        self.cfg = cfg
        self.grid_shape = grid_shape
        self.policy = cfg.weight_scheduler()
        self._coarse_ema: float | None = None

    def _as_channels(self, x):
        """View a (batch, dim) prediction as channels for grouping: image
        data stacks the batch into channels (per-sample grouping), flat data
        becomes one channel spanning the whole batch."""
        b = x.shape[0]
        if self.grid_shape is not None:
            c, h, w = self.grid_shape
            return x.reshape((b * c, h, w))
        return x.reshape((1, b, x.shape[1]))

    def evaluate(self, iteration: int, eps_t, eps_s, eps_noise, f_t=None, f_s=None, regressor=None):
        cfg = self.cfg
        bd = LossBreakdown(step=iteration)

        target = eps_t if cfg.diff_target == "teacher" else eps_noise
        l_diff = outkd_loss(target, eps_s)
        bd.l_diff = _val(l_diff)
        total = cfg.lambda_diff * l_diff

        if cfg.use_outkd:
            l_out = outkd_loss(eps_t, eps_s)
            bd.l_outkd = _val(l_out)
            total = total + cfg.lambda_outkd * l_out

        if cfg.use_place:
            t_vals = eps_t.value if isinstance(eps_t, Var) else np.asarray(eps_t)
            l_fit, groups = place_loss(
                self._as_channels(t_vals),
                self._as_channels(eps_s),
                cfg.group_size,
                self.policy,
                iteration,
                relaxed_l2=cfg.relaxed_l2,
                pooled_w=cfg.pooled_w,
            )
            bd.l_coarse = float(np.mean([g.l_coarse for g in groups]))
            bd.l_fine = float(np.mean([g.l_fine for g in groups]))
            bd.w = float(np.mean([g.w for g in groups]))
            bd.degenerate_fallbacks = sum(g.degenerate_fallbacks for g in groups)
            bd.l_lift = _val(l_fit)
            total = total + cfg.lambda_lift * l_fit
        elif cfg.use_lift:
            t_vals = eps_t.value if isinstance(eps_t, Var) else np.asarray(eps_t)
            s_vals = eps_s.value if isinstance(eps_s, Var) else np.asarray(eps_s)
            try:
                coeffs = ols_fit(t_vals, s_vals)
            except DegenerateVarianceError as err:
                coeffs = err.fallback
                bd.degenerate_fallbacks = 1
            l_coarse = coarse_loss(coeffs, cfg.relaxed_l2)
            coarse_for_w = l_coarse
            if cfg.adaptive_ema > 0.0:
                if self._coarse_ema is None:
                    self._coarse_ema = l_coarse
                else:
                    self._coarse_ema = cfg.adaptive_ema * self._coarse_ema + (1.0 - cfg.adaptive_ema) * l_coarse
                coarse_for_w = self._coarse_ema
            w = scheduled_weight(self.policy, iteration, coarse_for_w)
            if cfg.coeff_grad == "full" and bd.degenerate_fallbacks == 0:
                l_fit, coeffs = lift_loss(t_vals, eps_s, w, cfg.relaxed_l2, "full")
                l_fine = fine_loss(t_vals, s_vals, coeffs)
            else:
                l_fine = fine_loss(eps_t, eps_s, coeffs)
                l_fit = l_coarse + w * l_fine
            bd.l_coarse = l_coarse
            bd.l_fine = _val(l_fine)
            bd.w = w
            bd.l_lift = _val(l_fit)
            total = total + cfg.lambda_lift * l_fit

        if cfg.use_featkd:
            if regressor is None:
                raise ValueError("featkd enabled but no regressor supplied")
            l_feat = featkd_loss(f_t, f_s, regressor)
            bd.l_featkd = _val(l_feat)
            total = total + cfg.lambda_featkd * l_feat

        bd.total = _val(total)
        return total, l_diff, bd


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def default_dataset(cfg: HarnessConfig) -> Dataset:
    """The run dataset is a pure function of the config (seed + fields)."""
    return make_dataset(cfg.dataset, cfg.sample_count, Rng(cfg.seed).child("data"))


def _draw_batch(data: Dataset, sched, rng: Rng, batch_size: int):
    idx = rng.integers(0, len(data), batch_size)
    x0 = data.samples[idx]
    tvec = rng.integers(1, sched.total_steps + 1, batch_size)
    eps = rng.normal((batch_size, data.dim))
    abar = sched.alpha_bars[tvec - 1][:, None]
    x_t = np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps
    return x_t, tvec, eps


def train_teacher(cfg: HarnessConfig, rng: Rng, dataset: Dataset | None = None,
                  checkpoint_path=None) -> MLPDenoiser:
    """Plain denoising pretraining: MSE against the sampled ground-truth
    noise for ``teacher_iterations`` steps (0 returns the fresh init)."""
    cfg.validate()
    data = dataset if dataset is not None else default_dataset(cfg)
    sched = linear_schedule(cfg.total_steps, cfg.beta_start, cfg.beta_end)
    model = MLPDenoiser(data.dim, cfg.teacher_widths, cfg.total_steps, rng.child("init"))
    params = model.parameters()
    opt = AdamState.for_params(params)
    brng = rng.child("batches")
    for step in range(1, cfg.teacher_iterations + 1):
        x_t, tvec, eps = _draw_batch(data, sched, brng, cfg.batch_size)
        pred, _ = model.forward(x_t, tvec, record=True)
        d = eps - pred
        loss = (d * d).mean()
        if not np.isfinite(loss.value):
            raise DivergenceError(step)
        grads = backward(loss)
        adam_step(params, [grads.get(p, np.zeros_like(p.value)) for p in params], opt, cfg.teacher_lr)
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path,
                        seed_provenance={"seed": rng.seed, "spawn_key": list(rng.spawn_key)})
    return model


def distill(cfg: HarnessConfig, teacher: MLPDenoiser, rng: Rng,
            dataset: Dataset | None = None) -> RunReport:
    """Distill a freshly initialized student from a frozen teacher.

    Per step: draw a batch, noise it, evaluate teacher (tape-free) and
    student (on tape), assemble the configured loss stack, record the
    breakdown and the gradient norm of the diffusion loss on the same
    batch, and take one Adam step. Divergence raises DivergenceError with
    the partial report attached.
    """
    cfg.validate()
    data = dataset if dataset is not None else default_dataset(cfg)
    if teacher.data_dim != data.dim:
        raise ValueError(f"teacher expects dim {teacher.data_dim}, dataset has {data.dim}")
    sched = linear_schedule(cfg.total_steps, cfg.beta_start, cfg.beta_end)
    student = MLPDenoiser(data.dim, cfg.student_widths, cfg.total_steps, rng.child("student-init"))
    params = student.parameters()
    student_params = list(params)
    regressor = None
    if cfg.use_featkd:
        d_t = teacher.feature_dims()[cfg.feat_layer]
        d_s = student.feature_dims()[cfg.feat_layer]
        regressor = LinearMap.init(rng.child("regressor-init"), d_t, d_s)
        params = params + regressor.parameters()
    opt = AdamState.for_params(params)
    brng = rng.child("batches")
    stack = LossStack(cfg, data.grid_shape)

    steps: list[LossBreakdown] = []
    grad_norms: list[float] = []
    t_start = time.perf_counter()
    for step in range(1, cfg.iterations + 1):
        x_t, tvec, eps = _draw_batch(data, sched, brng, cfg.batch_size)
        eps_t, feats_t = teacher.forward(x_t, tvec, record=False)
        eps_s, feats_s = student.forward(x_t, tvec, record=True)
        f_t = feats_t[cfg.feat_layer] if cfg.use_featkd else None
        f_s = feats_s[cfg.feat_layer] if cfg.use_featkd else None
        total, l_diff, bd = stack.evaluate(step - 1, eps_t, eps_s, eps, f_t, f_s, regressor)
        bd.step = step
        if not np.isfinite(bd.total):
            partial = RunReport(rng.seed, steps, grad_norms, float("nan"), float("nan"),
                                float("nan"), time.perf_counter() - t_start, diverged=True)
            raise DivergenceError(step, partial)
        grads = backward(total)
        diff_grads = backward(l_diff)
        sq = 0.0
        for p in student_params:
            g = diff_grads.get(p)
            if g is not None:
                sq += float(np.sum(g * g))
        grad_norms.append(float(np.sqrt(sq)))
        adam_step(params, [grads.get(p, np.zeros_like(p.value)) for p in params], opt, cfg.lr)
        steps.append(bd)
    wall = time.perf_counter() - t_start

    eval_rng = rng.child("eval")
    generated = sample(student, sched, eval_rng.child("gen"), (cfg.eval_samples, data.dim))
    reference = data.samples[: cfg.eval_samples]
    final_sw = sliced_wasserstein(generated, reference, cfg.sw_projections, eval_rng.child("proj"))
    mean_err, cov_err = moment_gap(generated, reference)
    return RunReport(rng.seed, steps, grad_norms, final_sw, mean_err, cov_err, wall)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def _capacity_job(args):
    cfg, teacher, data, method, seed = args
    rng = Rng(seed).child("distill")
    try:
        report = distill(cfg, teacher, rng, dataset=data)
        return seed, report.final_sw, False
    except DivergenceError:
        return seed, float("nan"), True


def capacity_gap_experiment(cfg: HarnessConfig, workers: int = 1) -> list[dict]:
    """Grid over capacity_teacher_widths x capacity_student_widths x
    capacity_methods x seeds; all cells share the dataset and schedule.

    Returns one row dict per run carrying its cell's across-seed mean/std
    (population convention, diverged runs excluded and flagged), mirroring a
    per-try results table.
    """
    cfg.validate()
    data = default_dataset(cfg)
    teachers = {}
    for tw in cfg.capacity_teacher_widths:
        tcfg = replace(cfg, teacher_widths=list(tw))
        trng = Rng(cfg.seed).child("teacher", *tw)
        teachers[tuple(tw)] = train_teacher(tcfg, trng, dataset=data)

    jobs = []
    for tw in cfg.capacity_teacher_widths:
        for sw in cfg.capacity_student_widths:
            for method in cfg.capacity_methods:
                run_cfg = replace(
                    cfg,
                    teacher_widths=list(tw),
                    student_widths=list(sw),
                    **METHOD_PRESETS[method],
                )
                for seed in cfg.seeds:
                    jobs.append((run_cfg, teachers[tuple(tw)], data, method, seed))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_capacity_job, jobs))
    else:
        results = [_capacity_job(j) for j in jobs]

    rows: list[dict] = []
    for (run_cfg, teacher, _, method, seed), (seed_out, sw_val, diverged) in zip(jobs, results):
        rows.append(
            {
                "method": method,
                "teacher_widths": list(run_cfg.teacher_widths),
                "student_widths": list(run_cfg.student_widths),
                "teacher_params": teacher.param_count,
                "student_params": MLPDenoiser(
                    data.dim, run_cfg.student_widths, cfg.total_steps, Rng(0)
                ).param_count,
                "seed": seed_out,
                "final_sw": sw_val,
                "diverged": diverged,
            }
        )
    # annotate per-cell aggregates
    for row in rows:
        cell = [
            r
            for r in rows
            if r["method"] == row["method"]
            and r["teacher_params"] == row["teacher_params"]
            and r["student_params"] == row["student_params"]
        ]
        finite = [r["final_sw"] for r in cell if not r["diverged"]]
        row["mean"] = float(np.mean(finite)) if finite else float("nan")
        row["std"] = float(np.std(finite)) if finite else float("nan")
        row["n_diverged"] = sum(r["diverged"] for r in cell)
    return rows


def scheduler_ablation(cfg: HarnessConfig, teacher: MLPDenoiser,
                       kinds=("adaptive", "linear", "cosine"),
                       dataset: Dataset | None = None) -> list[tuple[str, RunReport]]:
    """Distill once per weight-scheduler kind, same seed and data."""
    data = dataset if dataset is not None else default_dataset(cfg)
    out = []
    for kind in kinds:
        run_cfg = replace(cfg, scheduler=kind)
        report = distill(run_cfg, teacher, Rng(cfg.seed).child("ablate", kind), dataset=data)
        out.append((kind, report))
    return out


# ---------------------------------------------------------------------------
# CSV output (repr floats: deterministic, round-trip exact)
# ---------------------------------------------------------------------------

def write_run_csv(report: RunReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "l_diff", "l_coarse", "l_fine", "w", "l_lift", "l_featkd", "total", "grad_norm"])
        for bd, gn in zip(report.steps, report.grad_norms):
            writer.writerow(
                [bd.step, repr(bd.l_diff), repr(bd.l_coarse), repr(bd.l_fine), repr(bd.w),
                 repr(bd.l_lift), repr(bd.l_featkd), repr(bd.total), repr(gn)]
            )


def write_capacity_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "teacher_params", "student_params", "seed", "final_sw", "mean", "std", "diverged"])
        for r in rows:
            writer.writerow(
                [r["method"], r["teacher_params"], r["student_params"], r["seed"],
                 repr(r["final_sw"]), repr(r["mean"]), repr(r["std"]), int(r["diverged"])]
            )


def write_scheduler_csv(results: list[tuple[str, RunReport]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scheduler", "final_sw", "mean_err", "cov_err"])
        for kind, rep in results:
            writer.writerow([kind, repr(rep.final_sw), repr(rep.mean_err), repr(rep.cov_err)])
