"""Coarse-to-fine knowledge distillation for toy diffusion models.

The package splits the teacher-student discrepancy into a coarse part (the
scalar affine map an ordinary-least-squares fit would apply to the student's
prediction) and a fine part (the residual left after that correction), trains
students under an adaptively weighted combination of both, optionally with
error-sorted equal-size groups fitted independently, and ships a diagnostic
sampler plus a seeded experiment harness that exhibits the teacher-capacity
instability the method mitigates.
"""

from .autodiff import Var, backward, detach, silu
from .datasets import Dataset, make_dataset
from .diffusion import (
    NoiseSchedule,
    StepDiagnostics,
    corrected_sample,
    ddpm_step,
    forward_noise,
    linear_schedule,
    sample,
    write_step_diagnostics_csv,
)
from .harness import (
    DivergenceError,
    HarnessConfig,
    LossStack,
    METHOD_PRESETS,
    RunReport,
    capacity_gap_experiment,
    default_dataset,
    distill,
    scheduler_ablation,
    train_teacher,
    write_capacity_csv,
    write_run_csv,
    write_scheduler_csv,
)
from .kd_losses import (
    LossBreakdown,
    WeightScheduler,
    adaptive_weight,
    coarse_loss,
    featkd_loss,
    fine_loss,
    lift_loss,
    outkd_loss,
    scheduled_weight,
)
from .metrics import moment_gap, sliced_wasserstein
from .models import AdamState, LinearMap, MLPDenoiser, adam_step, load_checkpoint, save_checkpoint
from .numerics import Rng, moments, randn, tensor_from_json, tensor_to_json
from .place import (
    ErrorMap,
    GroupPartition,
    IndivisibleGroupSizeError,
    error_map,
    export_error_map,
    load_error_map,
    partition,
    place_loss,
)
from .regression import (
    DegenerateVarianceError,
    RegressionCoeffs,
    affine_correct,
    ols_fit,
)

__version__ = "0.1.0"
