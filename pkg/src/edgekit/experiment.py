"""Build a problem from an :class:`ExperimentConfig`, run it and write the artifacts."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .forward import CtGeometry, blur_op, ct_build, parse_angles, psf_defocus, psf_shake, sinogram_image
from .jbd import HybridOptions, JbdOptions
from .krylov import LsqrOptions
from .linops import GradientOp, LinearOperator, reshape, vec
from .outer import OuterOptions, OuterResult, outer_drive
from .rules import Discrepancy, Fixed, LCurve, default_lambda_grid
from .testdata import (NoisyData, RunLog, add_noise, phantom, read_pgm, write_csv,
                       write_inner_csv, write_pgm)

WEIGHT_FLOOR = 1e-12


@dataclass
class Problem:
    A: LinearOperator
    x_true: np.ndarray
    shape: tuple[int, int]
    data: NoisyData

    def data_image(self) -> np.ndarray:
        if hasattr(self.A, "geometry"):
            return sinogram_image(self.A, self.data.b)
        return reshape(self.data.b, self.shape).data


def build_problem(cfg: ExperimentConfig) -> Problem:
    if cfg.phantom == "file":
        truth = read_pgm(cfg.image).data
    else:
        truth = phantom(cfg.phantom, cfg.n, cfg.phantom_seed).data
    shape = truth.shape
    if cfg.problem == "ct":
        if shape[0] != shape[1]:
            raise ValueError(f"CT needs a square image, got {shape}")
        A = ct_build(CtGeometry(shape[0], parse_angles(cfg.angles)))
    else:
        psf = psf_defocus(cfg.radius) if cfg.psf == "defocus" else psf_shake(
            cfg.shake_seed, cfg.shake_steps, cfg.shake_extent)
        A = blur_op(psf, shape)
    x_true = vec(truth)
    return Problem(A, x_true, shape, add_noise(A.apply(x_true), cfg.noise, cfg.noise_seed))


def outer_options(cfg: ExperimentConfig, eta_norm: float) -> OuterOptions:
    if cfg.rule == "dp":
        rule = Discrepancy(eta_norm, cfg.tau, cfg.lambda_max, cfg.lambda_min)
    elif cfg.rule == "lcurve":
        rule = LCurve(default_lambda_grid(cfg.lcurve_min, cfg.lcurve_max, cfg.lcurve_points))
    else:
        rule = Fixed(cfg.lam)
    lsqr = LsqrOptions(atol=cfg.lsqr_tol, btol=cfg.lsqr_tol)
    inner = HybridOptions(cfg.max_inner, cfg.stab_tol, cfg.stab_window,
                          JbdOptions(projector=cfg.projector, lsqr=lsqr))
    return OuterOptions(rule=rule, scheme=cfg.scheme, p=cfg.p, q=cfg.q, epsilon=cfg.epsilon,
                        max_outer=cfg.max_outer, inner=inner, cgls=lsqr)


def solve(cfg: ExperimentConfig, problem: Problem | None = None, callback=None) -> tuple[Problem, OuterResult]:
    problem = problem or build_problem(cfg)
    opts = outer_options(cfg, problem.data.eta_norm)
    result = outer_drive(problem.A, problem.data.b, problem.shape, problem.x_true, opts, callback)
    return problem, result


def weight_images(d, shape) -> tuple[np.ndarray, np.ndarray]:
    """Vertical and horizontal weight maps in log10 scale."""
    gv, gh = GradientOp(shape).split(np.asarray(d, dtype=float))
    return np.log10(np.maximum(gv, WEIGHT_FLOOR)), np.log10(np.maximum(gh, WEIGHT_FLOOR))


def _summary(cfg: ExperimentConfig, result: OuterResult, timings: dict[str, float]) -> str:
    log: RunLog = result.log
    final = log.outer[result.final_outer - 1]
    lines = [
        f"phantom: {cfg.phantom}  problem: {cfg.problem}  n: {cfg.n}",
        f"scheme: {cfg.scheme}  rule: {cfg.rule}",
        f"outer iterations run: {len(log.outer)}",
        f"returned iterate: {result.final_outer} ({result.stop_reason})",
        f"final relative error: {final.relative_error!r}",
        "lambda history: " + ", ".join(repr(r.lam) for r in log.outer),
        "lambda flags: " + ", ".join(r.lambda_flag for r in log.outer),
        "inner iterations: " + ", ".join(str(r.inner_iter_count) for r in log.outer),
    ]
    lines += [f"time {name}: {secs:.3f} s" for name, secs in timings.items()]
    return "\n".join(lines) + "\n"


def run_experiment(cfg: ExperimentConfig, output_dir=None) -> OuterResult:
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    problem = build_problem(cfg)
    t1 = time.perf_counter()
    write_pgm(reshape(problem.x_true, problem.shape), out / "true.pgm")
    write_pgm(problem.data_image(), out / "data.pgm")

    def dump(ell, x, d, record):
        write_pgm(reshape(x, problem.shape), out / f"recon_outer_{ell}.pgm")
        wv, wh = weight_images(d, problem.shape)
        write_pgm(wv, out / f"weights_v_{ell}.pgm")
        write_pgm(wh, out / f"weights_h_{ell}.pgm")

    _, result = solve(cfg, problem, dump)
    t2 = time.perf_counter()
    write_csv(result.log, out / "convergence.csv")
    write_inner_csv(result.log, out / "inner.csv")
    (out / "config.txt").write_text(cfg.to_text())
    (out / "summary.txt").write_text(_summary(cfg, result, {"setup": t1 - t0, "solve": t2 - t1}))
    return result


def write_forward(cfg: ExperimentConfig, output_dir=None) -> Problem:
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = build_problem(cfg)
    write_pgm(reshape(problem.x_true, problem.shape), out / "true.pgm")
    write_pgm(problem.data_image(), out / "data.pgm")
    (out / "data.txt").write_text("".join(f"{float(v)!r}\n" for v in problem.data.b))
    return problem
