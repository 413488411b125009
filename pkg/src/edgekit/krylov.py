"""LSQR and the stacked-system Tikhonov solver built on it."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linops import DimensionError, LinearOperator, aslinearoperator, vstack


class NumericalBreakdown(RuntimeError):
    """An iterative process produced non-finite values or failed to converge."""


@dataclass
class LsqrOptions:
    atol: float = 1e-10
    btol: float = 1e-10
    max_iters: int | None = None  # None -> 2 * ncols
    record_history: bool = True

    def __post_init__(self):
        for name in ("atol", "btol"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass
class LsqrResult:
    x: np.ndarray
    iters: int
    residual_history: list[float] = field(default_factory=list)
    flag: str = "converged"  # or "hit_max_iters"

    @property
    def converged(self) -> bool:
        return self.flag == "converged"


def lsqr(op, rhs, opts: LsqrOptions | None = None) -> LsqrResult:
    """Minimize ``||op x - rhs||_2`` by Golub-Kahan bidiagonalization (Paige & Saunders).

    Uses one ``apply`` and one ``apply_adjoint`` per iteration and the usual
    short recurrences, no reorthogonalization.  Stops when either the
    residual is small relative to ``btol*||rhs|| + atol*||op||*||x||`` or the
    normal-equations residual ``||op^T r|| / (||op|| ||r||)`` drops below
    ``atol``.
    """
    op = aslinearoperator(op)
    opts = opts or LsqrOptions()
    b = np.asarray(rhs, dtype=float)
    if b.shape != (op.nrows,):
        raise DimensionError(f"rhs has shape {b.shape}, operator has {op.nrows} rows")
    if not np.all(np.isfinite(b)):
        raise NumericalBreakdown("rhs contains non-finite entries")
    max_iters = opts.max_iters if opts.max_iters is not None else 2 * op.ncols

    x = np.zeros(op.ncols)
    history: list[float] = []
    beta = float(np.linalg.norm(b))
    if beta == 0.0:
        return LsqrResult(x, 0, history, "converged")
    u = b / beta
    v = op.apply_adjoint(u)
    alpha = float(np.linalg.norm(v))
    if alpha == 0.0:
        # rhs orthogonal to the range: x = 0 is already optimal
        return LsqrResult(x, 0, [beta] if opts.record_history else [], "converged")
    v = v / alpha
    w = v.copy()
    phibar, rhobar = beta, alpha
    anorm2 = 0.0
    bnorm = beta

    for it in range(1, max_iters + 1):
        u = op.apply(v) - alpha * u
        beta = float(np.linalg.norm(u))
        if beta > 0.0:
            u = u / beta
        anorm2 += alpha * alpha + beta * beta
        v_next = op.apply_adjoint(u) - beta * v
        alpha = float(np.linalg.norm(v_next))
        if alpha > 0.0:
            v_next = v_next / alpha

        rho = math.hypot(rhobar, beta)
        c, s = rhobar / rho, beta / rho
        theta = s * alpha
        rhobar = -c * alpha
        phi = c * phibar
        phibar = s * phibar

        x = x + (phi / rho) * w
        w = v_next - (theta / rho) * w
        v = v_next
        if not (math.isfinite(phibar) and np.all(np.isfinite(x))):
            raise NumericalBreakdown(f"LSQR produced non-finite values at iteration {it}")

        rnorm = phibar
        if opts.record_history:
            history.append(rnorm)
        anorm = math.sqrt(anorm2)
        arnorm = phibar * alpha * abs(c)
        xnorm = float(np.linalg.norm(x))
        if rnorm <= opts.btol * bnorm + opts.atol * anorm * xnorm:
            return LsqrResult(x, it, history, "converged")
        if anorm * rnorm > 0.0 and arnorm / (anorm * rnorm) <= opts.atol:
            return LsqrResult(x, it, history, "converged")
        if alpha == 0.0 or beta == 0.0:
            return LsqrResult(x, it, history, "converged")
    return LsqrResult(x, max_iters, history, "hit_max_iters")


def cgls_tikhonov(A, M, lam: float, b, opts: LsqrOptions | None = None) -> LsqrResult:
    """Fixed-parameter general-form Tikhonov: ``min ||Ax-b||^2 + lam^2 ||Mx||^2``.

    Solved as least squares on ``[A; lam M]`` with right-hand side ``[b; 0]``,
    which is the same Krylov sequence as CGLS on the normal equations.
    """
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    A = aslinearoperator(A)
    M = aslinearoperator(M)
    if A.ncols != M.ncols:
        raise DimensionError(f"A has {A.ncols} columns but M has {M.ncols}")
    b = np.asarray(b, dtype=float)
    rhs = np.concatenate([b, np.zeros(M.nrows)])
    return lsqr(vstack(A, M, lam), rhs, opts)


def tikhonov_objective(A: LinearOperator, M: LinearOperator, lam: float, b, x) -> float:
    """``||Ax - b||^2 + lam^2 ||Mx||^2``."""
    A = aslinearoperator(A)
    M = aslinearoperator(M)
    r = A.apply(x) - np.asarray(b, dtype=float)
    s = M.apply(x)
    return float(r @ r + lam * lam * (s @ s))
