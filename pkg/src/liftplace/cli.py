"""Command-line entry points.

Subcommands (all take ``--config CONFIG.toml --out DIR``):

* ``train-teacher``     pretrain a teacher, save its checkpoint.
* ``distill``           distill a student from a teacher checkpoint (or a
                        freshly trained teacher), write the per-step log.
* ``correct-sample``    run the regression-corrected diagnostic sampler,
                        write per-step coefficients/MSEs and the sample.
* ``error-map``         export the teacher-student absolute error map at a
                        probe timestep as JSON.
* ``capacity-gap``      the multi-seed teacher x student x method grid,
                        summarized to CSV.
* ``ablate-scheduler``  distill under adaptive/linear/cosine weight
                        schedules, write one log per schedule plus a
                        comparison CSV.
* ``defaults``          print the default config as TOML.

All randomness derives from the config's ``seed``; there are no environment
overrides. Config validation happens before any file is created. Exit codes:
0 success, 1 runtime failure (divergence), 2 usage/validation errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .diffusion import corrected_sample, linear_schedule, write_step_diagnostics_csv
from .harness import (
    DivergenceError,
    HarnessConfig,
    capacity_gap_experiment,
    default_dataset,
    distill,
    scheduler_ablation,
    train_teacher,
    write_capacity_csv,
    write_run_csv,
    write_scheduler_csv,
)
from .models import MLPDenoiser, load_checkpoint, save_checkpoint
from .numerics import Rng, tensor_to_json
from .place import error_map, export_error_map


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="liftplace",
        description="Coarse-to-fine distillation experiments for toy diffusion models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("train-teacher", "pretrain a denoiser with the plain diffusion loss"),
        ("distill", "distill a student with the configured loss stack"),
        ("correct-sample", "diagnostic sampler with per-step affine correction"),
        ("error-map", "export the teacher-student error map at a probe timestep"),
        ("capacity-gap", "multi-seed teacher x student x method experiment grid"),
        ("ablate-scheduler", "compare adaptive/linear/cosine fine-term weight schedules"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML config path (see `liftplace defaults`)")
        p.add_argument("--out", required=True, help="output directory (created if missing)")
        p.add_argument("--workers", type=int, default=1,
                       help="parallel runs for capacity-gap (default 1: fully serial)")
    sub.add_parser("defaults", help="print the default config as TOML")
    return parser


def _load_teacher(cfg: HarnessConfig, out: Path) -> MLPDenoiser:
    """Teacher from the configured checkpoint, else train one and save it."""
    if cfg.teacher_checkpoint:
        return load_checkpoint(cfg.teacher_checkpoint)
    rng = Rng(cfg.seed).child("teacher", *cfg.teacher_widths)
    return train_teacher(cfg, rng, checkpoint_path=out / "teacher.json")


def _load_student(cfg: HarnessConfig, data_dim: int) -> MLPDenoiser:
    if cfg.student_checkpoint:
        return load_checkpoint(cfg.student_checkpoint)
    return MLPDenoiser(data_dim, cfg.student_widths, cfg.total_steps,
                       Rng(cfg.seed).child("student-init"))


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)

    if args.command == "defaults":
        from .config_io import config_to_toml

        sys.stdout.write(config_to_toml(HarnessConfig()))
        return 0

    from .config_io import load_config

    try:
        cfg = load_config(args.config)
        cfg.validate()
    except OSError as err:
        print(f"config error: cannot read {args.config!r}: {err}", file=sys.stderr)
        return 2
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    try:
        if args.command == "train-teacher":
            teacher = train_teacher(cfg, Rng(cfg.seed).child("teacher", *cfg.teacher_widths),
                                    checkpoint_path=out / "teacher.json")
            print(f"train-teacher: params={teacher.param_count} "
                  f"iters={cfg.teacher_iterations} -> {out / 'teacher.json'}")

        elif args.command == "distill":
            teacher = _load_teacher(cfg, out)
            report = distill(cfg, teacher, Rng(cfg.seed).child("distill"))
            write_run_csv(report, out / "run.csv")
            print(f"distill: {cfg.iterations} steps, final_sw={report.final_sw:.4f} "
                  f"-> {out / 'run.csv'}")

        elif args.command == "correct-sample":
            teacher = _load_teacher(cfg, out)
            data = default_dataset(cfg)
            student = _load_student(cfg, data.dim)
            sched = linear_schedule(cfg.total_steps, cfg.beta_start, cfg.beta_end)
            # The MLPs take flat inputs; the joint fit is view-independent.
            x0, diags = corrected_sample(teacher, student, sched,
                                         Rng(cfg.seed).child("corrected"), (data.dim,))
            write_step_diagnostics_csv(diags, out / "correction.csv")
            (out / "sample.json").write_text(tensor_to_json(x0), encoding="utf-8")
            improved = sum(d.corrected_mse < d.raw_mse for d in diags)
            print(f"correct-sample: {len(diags)} steps, corrected<raw on {improved} "
                  f"-> {out / 'correction.csv'}")

        elif args.command == "error-map":
            teacher = _load_teacher(cfg, out)
            data = default_dataset(cfg)
            student = _load_student(cfg, data.dim)
            sched = linear_schedule(cfg.total_steps, cfg.beta_start, cfg.beta_end)
            t = cfg.error_map_t or max(1, cfg.total_steps // 2)
            rng = Rng(cfg.seed).child("error-map")
            x0 = data.samples[0]
            x_t = np.sqrt(sched.alpha_bars[t - 1]) * x0 + np.sqrt(
                1.0 - sched.alpha_bars[t - 1]) * rng.normal(x0.shape)
            view = data.grid_shape or (1, 1, data.dim)
            emap = error_map(np.asarray(teacher(x_t, t)).reshape(view),
                             np.asarray(student(x_t, t)).reshape(view))
            export_error_map(emap, out / "error_map.json")
            print(f"error-map: t={t} shape={view} max={emap.values.max():.4f} "
                  f"-> {out / 'error_map.json'}")

        elif args.command == "capacity-gap":
            rows = capacity_gap_experiment(cfg, workers=args.workers)
            write_capacity_csv(rows, out / "capacity_summary.csv")
            cells = {(r["method"], r["teacher_params"]) for r in rows}
            print(f"capacity-gap: {len(rows)} runs over {len(cells)} cells "
                  f"-> {out / 'capacity_summary.csv'}")

        elif args.command == "ablate-scheduler":
            teacher = _load_teacher(cfg, out)
            results = scheduler_ablation(cfg, teacher)
            for kind, report in results:
                write_run_csv(report, out / f"run_{kind}.csv")
            write_scheduler_csv(results, out / "scheduler_comparison.csv")
            best = min(results, key=lambda kr: kr[1].final_sw)
            print(f"ablate-scheduler: best={best[0]} (final_sw={best[1].final_sw:.4f}) "
                  f"-> {out / 'scheduler_comparison.csv'}")

    except DivergenceError as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
