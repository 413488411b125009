"""Regularization-parameter rules applied to the projected problem."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq


class RuleError(ValueError):
    pass


@dataclass(frozen=True)
class Discrepancy:
    """Pick lambda so the residual norm equals ``tau * eta_norm``."""

    eta_norm: float
    tau: float = 1.01
    lambda_max: float = 1e8
    lambda_min: float = 1e-10
    rtol: float = 1e-4

    def __post_init__(self):
        if not 0 < self.lambda_min < self.lambda_max:
            raise RuleError("need 0 < lambda_min < lambda_max")
        if not self.tau > 1.0:
            raise RuleError(f"tau must exceed 1, got {self.tau}")
        if self.eta_norm < 0:
            raise RuleError("eta_norm must be non-negative")

    @property
    def target(self) -> float:
        return self.tau * self.eta_norm


def default_lambda_grid(lo: float = 1e-6, hi: float = 1e2, count: int = 25) -> tuple[float, ...]:
    return tuple(float(v) for v in np.logspace(math.log10(lo), math.log10(hi), count))


@dataclass(frozen=True)
class LCurve:
    lambda_grid: tuple[float, ...] = field(default_factory=default_lambda_grid)

    def __post_init__(self):
        grid = tuple(float(v) for v in self.lambda_grid)
        object.__setattr__(self, "lambda_grid", grid)
        if len(grid) < 3:
            raise RuleError("the L-curve grid needs at least 3 values")
        if grid[0] <= 0 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise RuleError("the L-curve grid must be positive and strictly increasing")


@dataclass(frozen=True)
class Fixed:
    lam: float

    def __post_init__(self):
        if self.lam < 0:
            raise RuleError(f"fixed lambda must be >= 0, got {self.lam}")


ParameterRule = Discrepancy | LCurve | Fixed


@dataclass(frozen=True)
class RootResult:
    lam: float | None
    status: str  # "root" | "at_lower_bound" | "unattainable"


def _checked(fn, lam):
    value = float(fn(lam))
    if not math.isfinite(value):
        raise RuleError(f"residual function returned {value} at lambda={lam}")
    return value


def discrepancy_root(residual_fn: Callable[[float], float], target: float, lambda_max: float,
                     rtol: float = 1e-4, xtol: float = 1e-12,
                     lambda_min: float | None = None) -> RootResult:
    """Solve ``residual_fn(lam) == target`` for a non-decreasing ``residual_fn``.

    Bisection on ``log10(lam)`` over ``[lambda_min, lambda_max]`` (``lambda_min``
    defaults to ``1e-12*lambda_max``) until
    the relative mismatch is below ``rtol``, then a Brent polish of the final
    bracket so the returned value does not depend on ``rtol``.
    """
    if residual_fn is None or lambda_max <= 0:
        raise RuleError("need a residual function and a positive lambda_max")
    if _checked(residual_fn, 0.0) >= target:
        return RootResult(0.0, "at_lower_bound")
    hi = math.log10(lambda_max)
    if _checked(residual_fn, lambda_max) < target:
        return RootResult(None, "unattainable")
    lo = hi - 12.0 if lambda_min is None else math.log10(lambda_min)
    if not lo < hi:
        raise RuleError("lambda_min must be below lambda_max")
    f_lo = _checked(residual_fn, 10.0 ** lo) - target
    if f_lo >= 0:
        return RootResult(10.0 ** lo, "root")

    def g(t):
        return _checked(residual_fn, 10.0 ** t) - target

    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        f_mid = g(mid)
        if f_mid == 0.0:
            return RootResult(10.0 ** mid, "root")
        if f_mid < 0:
            lo = mid
        else:
            hi = mid
        if abs(f_mid) <= rtol * target:
            break
    if hi - lo > xtol and g(lo) < 0 < g(hi):
        t = brentq(g, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps)
    else:
        t = 0.5 * (lo + hi)
    return RootResult(10.0 ** t, "root")


def menger_curvature(points) -> np.ndarray:
    """Curvature of the circle through each consecutive triple (interior points)."""
    p = np.asarray(points, dtype=float)
    a, b, c = p[:-2], p[1:-1], p[2:]
    ab = np.linalg.norm(b - a, axis=1)
    bc = np.linalg.norm(c - b, axis=1)
    ca = np.linalg.norm(a - c, axis=1)
    cross = (b - a)[:, 0] * (c - a)[:, 1] - (b - a)[:, 1] * (c - a)[:, 0]
    denom = ab * bc * ca
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(denom > 0, 2.0 * np.abs(cross) / denom, 0.0)
    return kappa


def lcurve_corner(points, collinear_tol: float = 1e-12) -> int | None:
    """Index of the L-curve corner, or ``None`` when the log-log points are collinear.

    ``points`` are ``(residual_norm, seminorm)`` pairs ordered by increasing
    lambda.  Ties go to the larger lambda.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
        raise RuleError("need at least 3 (residual, seminorm) points")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise RuleError("L-curve points must be positive and finite")
    logs = np.log10(pts)
    a, b, c = logs[:-2], logs[1:-1], logs[2:]
    cross = np.abs((b - a)[:, 0] * (c - a)[:, 1] - (b - a)[:, 1] * (c - a)[:, 0])
    lens = np.linalg.norm(b - a, axis=1) * np.linalg.norm(c - a, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        sines = np.where(lens > 0, cross / lens, 0.0)
    if not np.any(sines > collinear_tol):
        return None
    kappa = menger_curvature(logs)
    best = np.flatnonzero(kappa == kappa.max())
    return int(best[-1]) + 1


@dataclass(frozen=True)
class Decision:
    lam: float | None
    status: str  # "root", "at_lower_bound", "unattainable", "corner", "no_corner", "fixed"

    @property
    def decided(self) -> bool:
        return self.lam is not None


def rule_select(rule, evaluate: Callable[[float], tuple[float, float]]) -> Decision:
    """One per-iteration decision.

    ``evaluate(lam)`` returns ``(residual_norm, seminorm)`` of the projected
    solution.  Undecided iterations come back with ``lam=None``.
    """
    if isinstance(rule, Fixed):
        return Decision(rule.lam, "fixed")
    if isinstance(rule, Discrepancy):
        res = discrepancy_root(lambda lam: evaluate(lam)[0], rule.target, rule.lambda_max, rule.rtol,
                              lambda_min=rule.lambda_min)
        return Decision(res.lam, res.status)
    if isinstance(rule, LCurve):
        pts = [evaluate(lam) for lam in rule.lambda_grid]
        try:
            idx = lcurve_corner(pts)
        except RuleError:
            idx = None
        if idx is None:
            return Decision(None, "no_corner")
        return Decision(rule.lambda_grid[idx], "corner")
    raise RuleError(f"unknown rule {rule!r}")
