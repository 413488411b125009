"""Dense reference solvers and the numerical checks on discrepancy curves.

Everything here assembles explicit matrices, so it is limited to small
problems (at most 400 unknowns).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .forward import CtGeometry, ct_build
from .linops import DimensionError, GradientOp, aslinearoperator, vec
from .outer import accumulate, new_weights, WeightState
from .rules import discrepancy_root
from .testdata import add_noise

MAX_UNKNOWNS = 400


def assemble(op) -> np.ndarray:
    """Dense matrix of an operator, column by column."""
    if isinstance(op, np.ndarray):
        return np.atleast_2d(np.asarray(op, dtype=float))
    op = aslinearoperator(op)
    if op.ncols > MAX_UNKNOWNS:
        raise DimensionError(f"refusing to assemble {op.ncols} columns (limit {MAX_UNKNOWNS})")
    if hasattr(op, "matrix"):
        mat = op.matrix
        return mat.toarray() if hasattr(mat, "toarray") else np.array(mat, dtype=float)
    eye = np.eye(op.ncols)
    return np.column_stack([op.apply(e) for e in eye]) if op.nrows else np.zeros((0, op.ncols))


@dataclass
class DenseProblem:
    A: np.ndarray
    M: np.ndarray
    b: np.ndarray
    x_true: np.ndarray | None = None
    eta_norm: float = 0.0

    def __post_init__(self):
        self.A = assemble(self.A)
        self.M = assemble(self.M)
        self.b = np.asarray(self.b, dtype=float)
        n = self.A.shape[1]
        if n > MAX_UNKNOWNS:
            raise DimensionError(f"oracle problems are limited to {MAX_UNKNOWNS} unknowns, got {n}")
        if self.M.shape[1] != n or self.b.shape != (self.A.shape[0],):
            raise DimensionError("A, M and b do not conform")
        if np.linalg.matrix_rank(np.vstack([self.A, self.M])) < n:
            raise ValueError("null(A) and null(M) intersect: [A; M] is rank deficient")

    def with_weights(self, d) -> "DenseProblem":
        """Same data with ``M`` replaced by ``diag(d) M``."""
        out = DenseProblem.__new__(DenseProblem)
        out.A, out.b, out.x_true, out.eta_norm = self.A, self.b, self.x_true, self.eta_norm
        out.M = np.asarray(d, dtype=float)[:, None] * self.M
        return out


def dense_tikhonov(prob: DenseProblem, lam: float) -> np.ndarray:
    """Minimizer of ``||Ax - b||^2 + lam^2 ||Mx||^2``.

    Solved as least squares on ``[A; lam M]`` (same solution as the normal
    equations, better conditioned); ``lam = 0`` gives the minimal-norm
    least-squares solution of ``Ax = b``.
    """
    if not lam >= 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    if lam == 0.0:
        return np.linalg.lstsq(prob.A, prob.b, rcond=None)[0]
    K = np.vstack([prob.A, lam * prob.M])
    rhs = np.concatenate([prob.b, np.zeros(prob.M.shape[0])])
    return np.linalg.lstsq(K, rhs, rcond=None)[0]


def svd_filter(A, b, r: int | None = None, lam: float | None = None) -> np.ndarray:
    """Spectral filtering: truncated SVD (``r``) or standard-form Tikhonov (``lam``)."""
    if (r is None) == (lam is None):
        raise ValueError("give exactly one of r (TSVD) or lam (Tikhonov)")
    A = np.asarray(A, dtype=float)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    tol = s.max(initial=0.0) * max(A.shape) * np.finfo(float).eps
    rank = int(np.sum(s > tol))
    coef = U.T @ np.asarray(b, dtype=float)
    if r is not None:
        if r < 0 or r > rank:
            raise ValueError(f"truncation index {r} outside 0..{rank}")
        phi = (np.arange(s.size) < r).astype(float)
    else:
        if lam < 0:
            raise ValueError(f"lambda must be non-negative, got {lam}")
        phi = np.where(s > tol, s * s / (s * s + lam * lam), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = np.where(phi > 0, phi * coef / s, 0.0)
    return Vt.T @ scaled


def residual_norm(prob: DenseProblem, lam: float) -> float:
    return float(np.linalg.norm(prob.b - prob.A @ dense_tikhonov(prob, lam)))


def discrepancy_curve(prob: DenseProblem, weights_sequence, lambda_grid) -> np.ndarray:
    """Residual norms, one row per weight vector, one column per lambda."""
    grid = [float(v) for v in lambda_grid]
    out = np.empty((len(weights_sequence), len(grid)))
    for i, d in enumerate(weights_sequence):
        wp = prob.with_weights(d)
        out[i] = [residual_norm(wp, lam) for lam in grid]
    return out


@dataclass
class MonotonicityReport:
    roots: list[float | None]
    statuses: list[str]
    violations: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations and all(s == "root" for s in self.statuses)


def verify_lambda_monotonicity(prob: DenseProblem, weights_sequence, tau: float = 1.01,
                               lambda_max: float = 1e4, slack: float = 1e-8) -> MonotonicityReport:
    """Discrepancy roots of each dense curve; flags every ``root[l+1] < root[l] - slack``."""
    target = tau * prob.eta_norm
    roots, statuses = [], []
    for d in weights_sequence:
        wp = prob.with_weights(d)
        res = discrepancy_root(lambda lam, wp=wp: residual_norm(wp, lam), target, lambda_max)
        roots.append(res.lam)
        statuses.append(res.status)
    report = MonotonicityReport(roots, statuses)
    for i in range(len(roots) - 1):
        a, b = roots[i], roots[i + 1]
        if a is not None and b is not None and b < a - slack:
            report.violations.append(i + 1)
    return report


def dense_weight_sequence(prob: DenseProblem, shape, updates: int, tau: float = 1.01,
                          p: float = 2.0, lambda_max: float = 1e4) -> list[np.ndarray]:
    """Cumulative weights produced by the outer loop with exact discrepancy solves.

    Returns ``updates + 1`` weight vectors, starting from all ones.
    """
    L = GradientOp(shape)
    state = WeightState.initial(L.nrows)
    seq = [state.d.copy()]
    for _ in range(updates):
        wp = prob.with_weights(state.d)
        res = discrepancy_root(lambda lam: residual_norm(wp, lam), tau * prob.eta_norm, lambda_max)
        lam = res.lam if res.lam is not None else lambda_max
        x = dense_tikhonov(wp, lam)
        state = accumulate(state, new_weights(x, p, shape))
        seq.append(state.d.copy())
    return seq


def blocks_image(n: int) -> np.ndarray:
    """Small piecewise-constant test image for oracle problems."""
    img = np.zeros((n, n))
    h = n // 2
    img[1:h + 1, 1:h + 1] = 1.0
    img[h - 1:n - 1, h:n - 1] = 0.5
    img[n - 2:, :2] = 0.75
    return img


def small_ct_problem(n: int = 8, angles=tuple(range(0, 180, 15)), noise: float = 1e-2,
                     seed: int = 0) -> tuple[DenseProblem, tuple[int, int]]:
    A = ct_build(CtGeometry(n, angles))
    L = GradientOp((n, n))
    x = vec(blocks_image(n))
    data = add_noise(A.apply(x), noise, seed)
    prob = DenseProblem(assemble(A), L.as_matrix().toarray(), data.b, x, data.eta_norm)
    return prob, (n, n)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def oracle_suite(updates: int = 4, grid_points: int = 20, tau: float = 1.01) -> list[Check]:
    """Curve nesting and parameter monotonicity on an 8x8 CT problem."""
    prob, shape = small_ct_problem()
    seq = dense_weight_sequence(prob, shape, updates, tau)
    grid = np.logspace(-4, 2, grid_points)
    curves = discrepancy_curve(prob, seq, grid)
    gaps = curves[1:] - curves[:-1]
    worst = float(gaps.max()) if gaps.size else -math.inf
    checks = [Check("discrepancy curves nest as weights decrease",
                    bool(worst <= 1e-10), f"max increase {worst:.3e} over {len(seq)} curves")]
    mono = verify_lambda_monotonicity(prob, seq, tau)
    roots = ", ".join("none" if r is None else f"{r:.6g}" for r in mono.roots)
    checks.append(Check("discrepancy roots non-decreasing across outer iterations",
                        mono.ok, f"roots [{roots}]"))
    return checks


__all__ = [
    "Check",
    "DenseProblem",
    "MonotonicityReport",
    "assemble",
    "dense_tikhonov",
    "dense_weight_sequence",
    "discrepancy_curve",
    "oracle_suite",
    "small_ct_problem",
    "svd_filter",
    "verify_lambda_monotonicity",
]
