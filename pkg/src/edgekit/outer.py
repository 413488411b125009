"""Outer iterations: cumulative edge weights, IRN-TV weights and the inner-outer driver."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .jbd import HybridOptions, NumericalBreakdown, hybrid_solve
from .krylov import LsqrOptions, cgls_tikhonov
from .linops import (DimensionError, GradientOp, ImageGrid, LinearOperator, MatrixOp,
                     aslinearoperator, compose, diag_op, vec)
from .rules import Discrepancy, Fixed, LCurve
from .testdata import OuterRecord, RunLog, relative_error


class WeightLawViolation(AssertionError):
    """Cumulative weights left [0, 1], increased, or revived a zero."""


def _image(x, shape=None) -> np.ndarray:
    if isinstance(x, ImageGrid):
        return x.data
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        return x
    if shape is None:
        raise DimensionError("a vector image needs its grid shape")
    if x.size != shape[0] * shape[1]:
        raise DimensionError(f"vector of length {x.size} does not fit grid {shape}")
    return x.reshape(shape, order="F")


def new_weights(x_prev, p: float = 2.0, shape=None) -> np.ndarray:
    """``d = 1 - (|L x| / ||L x||_inf)^p``; all ones when ``x_prev`` is constant."""
    if not p > 0:
        raise ValueError(f"p must be positive, got {p}")
    img = _image(x_prev, shape)
    L = GradientOp(img.shape)
    g = np.abs(L.apply(vec(img)))
    top = g.max()
    if top == 0.0:
        return np.ones(L.nrows)
    return 1.0 - (g / top) ** p


@dataclass(frozen=True)
class WeightState:
    d: np.ndarray
    outer_index: int = 0
    lx_history: tuple[float, ...] = ()

    @classmethod
    def initial(cls, size: int) -> "WeightState":
        return cls(np.ones(size))


def check_weight_laws(d_prev, d_next) -> None:
    if np.any(d_next < 0) or np.any(d_next > 1):
        raise WeightLawViolation("weights left [0, 1]")
    if np.any(d_next > d_prev):
        raise WeightLawViolation("a weight increased between outer iterations")
    if np.any(d_next[d_prev == 0] != 0):
        raise WeightLawViolation("a zero weight became non-zero")


def accumulate(weights: WeightState, d_new, lx_norm: float | None = None) -> WeightState:
    d_new = np.asarray(d_new, dtype=float)
    if d_new.shape != weights.d.shape:
        raise DimensionError(f"weight lengths differ: {d_new.shape} vs {weights.d.shape}")
    d = d_new * weights.d
    check_weight_laws(weights.d, d)
    hist = weights.lx_history + ((lx_norm,) if lx_norm is not None else ())
    return WeightState(d, weights.outer_index + 1, hist)


def _padded_magnitude(img: np.ndarray) -> np.ndarray:
    """Per-pixel squared gradient magnitude with zero-padded derivative images."""
    m = np.zeros(img.shape)
    m[:-1, :] += np.diff(img, axis=0) ** 2
    m[:, :-1] += np.diff(img, axis=1) ** 2
    return m


def total_variation(x, shape=None) -> float:
    """Isotropic TV, summing gradient magnitudes over every pixel (zero-padded differences)."""
    return float(np.sqrt(_padded_magnitude(_image(x, shape))).sum())


def irn_tv_weights(x_prev, q: float = 1.0, epsilon: float | None = None, shape=None) -> np.ndarray:
    """Square roots of the IRN-TV weights, laid out like the output of ``L``.

    ``epsilon=None`` picks ``1e-8 * max(m)``; a constant image then gets unit weights.
    """
    if not 1.0 <= q <= 2.0:
        raise ValueError(f"q must lie in [1, 2], got {q}")
    img = _image(x_prev, shape)
    nv, nh = img.shape
    m = _padded_magnitude(img)
    if epsilon is None:
        epsilon = 1e-8 * m.max()
        if epsilon == 0.0:
            return np.ones((nv - 1) * nh + nv * (nh - 1))
    if epsilon < 0:
        raise ValueError(f"epsilon must be non-negative, got {epsilon}")
    with np.errstate(divide="ignore"):
        w = (m + epsilon) ** ((q - 2.0) / 4.0)
    return np.concatenate([w[:-1, :].ravel(order="F"), w[:, :-1].ravel(order="F")])


@dataclass
class OuterOptions:
    rule: object = None  # Discrepancy | LCurve | Fixed
    scheme: str = "new"  # "new" or "irn_tv"
    p: float = 2.0
    q: float = 1.0
    epsilon: float | None = None
    max_outer: int = 20
    inner: HybridOptions = field(default_factory=HybridOptions)
    cgls: LsqrOptions = field(default_factory=lambda: LsqrOptions(atol=1e-10, btol=1e-10))

    def __post_init__(self):
        if self.scheme not in ("new", "irn_tv"):
            raise ValueError(f"unknown weight scheme {self.scheme!r}")
        if not self.p > 0:
            raise ValueError(f"p must be positive, got {self.p}")
        if self.scheme == "irn_tv" and not 1.0 <= self.q < 2.0:
            raise ValueError(f"q must satisfy 1 <= q < 2, got {self.q}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_outer < 1:
            raise ValueError(f"max_outer must be >= 1, got {self.max_outer}")
        if self.rule is not None and not isinstance(self.rule, (Discrepancy, LCurve, Fixed)):
            raise TypeError(f"unsupported rule {self.rule!r}")


@dataclass
class OuterResult:
    x: np.ndarray
    log: RunLog
    final_outer: int
    stop_reason: str  # "seminorm_decrease" or "max_outer"
    iterates: list[np.ndarray]
    weights: list[np.ndarray]


def _weighted_gradient(L: GradientOp, L_mat, d, explicit: bool) -> LinearOperator:
    if explicit:
        return MatrixOp(sp.diags(d) @ L_mat)
    return compose(diag_op(d), L)


def outer_drive(A, b, shape, x_true=None, opts: OuterOptions | None = None, callback=None) -> OuterResult:
    """Run the inner-outer iterations from a zero start.

    Stops at ``max_outer`` or as soon as ``||L x||`` drops, returning the
    iterate before the drop.  ``callback(ell, x, d, record)`` is called
    after each outer iteration.
    """
    opts = opts or OuterOptions()
    rule = opts.rule if opts.rule is not None else LCurve()
    A = aslinearoperator(A)
    L = GradientOp(shape)
    if A.ncols != L.ncols:
        raise DimensionError(f"A has {A.ncols} columns but the grid {shape} has {L.ncols} pixels")
    b = np.asarray(b, dtype=float)
    x_ref = None if x_true is None else np.asarray(x_true, dtype=float)
    explicit = isinstance(A, MatrixOp)
    L_mat = L.as_matrix() if explicit else None

    log = RunLog()
    weights = WeightState.initial(L.nrows)
    x_prev = np.zeros(L.ncols)
    iterates: list[np.ndarray] = []
    applied: list[np.ndarray] = []
    lx_norms: list[float] = []
    stop = "max_outer"

    for ell in range(1, opts.max_outer + 1):
        if opts.scheme == "new":
            weights = accumulate(weights, new_weights(x_prev, opts.p, shape),
                                 lx_norms[-1] if lx_norms else None)
            d = weights.d
        else:
            d = irn_tv_weights(x_prev, opts.q, opts.epsilon, shape)
        M = _weighted_gradient(L, L_mat, d, explicit)
        try:
            if isinstance(rule, Fixed):
                res = cgls_tikhonov(A, M, rule.lam, b, opts.cgls)
                x, lam, k, flag = res.x, rule.lam, res.iters, "fixed"
            else:
                hres = hybrid_solve(A, M, b, rule, opts.inner, x_true=x_ref, outer_iter=ell)
                x, lam, k, flag = hres.x, hres.lambda_star, hres.k_final, hres.flag
                log.inner.extend(hres.inner_log)
        except NumericalBreakdown as exc:
            raise NumericalBreakdown(f"outer iteration {ell}: {exc}") from exc

        lx = float(np.linalg.norm(L.apply(x)))
        record = OuterRecord(
            outer_iter=ell, inner_iter_count=int(k), lam=float(lam),
            residual_norm=float(np.linalg.norm(A.apply(x) - b)), seminorm=lx,
            relative_error=relative_error(x, x_ref) if x_ref is not None else None,
            lambda_flag=flag,
        )
        log.outer.append(record)
        iterates.append(x)
        applied.append(d.copy())
        if callback is not None:
            callback(ell, x, d, record)
        if lx_norms and lx < lx_norms[-1]:
            stop = "seminorm_decrease"
            lx_norms.append(lx)
            break
        lx_norms.append(lx)
        x_prev = x

    final = len(iterates) - 1 if stop == "seminorm_decrease" else len(iterates)
    return OuterResult(iterates[final - 1], log, final, stop, iterates, applied)
