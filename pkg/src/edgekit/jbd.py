"""Joint bidiagonalization of ``(A, M)`` and the hybrid inner solver built on it.

With ``C = [A; M]`` and ``Q`` an orthonormal basis of ``range(C)``, the process
runs Golub-Kahan on the top block ``Q_A`` of ``Q``.  The inner vectors are kept
in range coordinates (``Vt``, columns ``C z``) together with their solution
space preimages ``Z``, so that

    A Z_k = U_{k+1} B_k,   M Z_k = Uhat_k Bhat_k,   B_k^T B_k + Bhat_k^T Bhat_k = I.

Each step projects ``[u_k; 0]`` onto ``range(C)``, by LSQR or by a Cholesky
factorization of ``C^T C`` when the operators are explicit matrices.

``B`` and ``Bhat`` store every Gram-Schmidt coefficient rather than only the
two nominal diagonals.  In exact arithmetic the extra entries vanish; keeping
them makes the identities above hold to rounding even when the projection is
only approximate, and their size is reported as ``offband``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .krylov import LsqrOptions, NumericalBreakdown, lsqr
from .linops import DimensionError, LinearOperator, MatrixOp, aslinearoperator, vstack
from .rules import Decision, Discrepancy, Fixed, LCurve, rule_select
from .testdata import InnerRecord, relative_error

BREAKDOWN_TOL = 1e-13


@dataclass
class JbdOptions:
    projector: str = "auto"  # "lsqr", "cholesky" or "auto" (cholesky when both are matrices)
    lsqr: LsqrOptions = field(default_factory=lambda: LsqrOptions(atol=1e-12, btol=1e-12))
    strict_lsqr: bool = True
    band_tol: float | None = None

    def __post_init__(self):
        if self.projector not in ("auto", "lsqr", "cholesky"):
            raise ValueError(f"unknown projector {self.projector!r}")


class _CholeskyProjector:
    """Least squares on ``C`` through a dense Cholesky factor of ``C^T C``."""

    def __init__(self, A: MatrixOp, M: MatrixOp):
        def gram(mat):
            g = mat.T @ mat
            return g.toarray() if sp.issparse(g) else np.asarray(g)

        G = gram(A.matrix) + gram(M.matrix)
        try:
            self.factor = sla.cho_factor(G, lower=False, check_finite=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalBreakdown(
                "C^T C is not positive definite; null(A) and null(M) intersect"
            ) from exc
        self.A = A

    def solve(self, u):
        return sla.cho_solve(self.factor, self.A.apply_adjoint(u)), 1


def _wants_cholesky(A, M, opts: JbdOptions) -> bool:
    if opts.projector == "lsqr":
        return False
    explicit = isinstance(A, MatrixOp) and isinstance(M, MatrixOp)
    if opts.projector == "cholesky" and not explicit:
        raise DimensionError("the Cholesky projector needs explicit matrices for A and M")
    return explicit and A.ncols <= 6000


@dataclass
class JbdState:
    A: LinearOperator
    M: LinearOperator
    b: np.ndarray
    beta: float
    U: np.ndarray  # m x (k+1)
    Vt: np.ndarray  # (m+p) x k
    Z: np.ndarray  # n x k
    B: np.ndarray  # (k+1) x k
    Bhat: np.ndarray  # k x k
    Uhat: np.ndarray  # p x k
    opts: JbdOptions
    lsqr_iteration_counts: list[int] = field(default_factory=list)
    offband: list[float] = field(default_factory=list)
    exhausted: bool = False
    projector: object = None

    @property
    def k(self) -> int:
        return self.Z.shape[1]

    @property
    def m(self) -> int:
        return self.A.nrows

    @property
    def p(self) -> int:
        return self.M.nrows

    @property
    def n(self) -> int:
        return self.A.ncols


def jbd_init(A, M, b, opts: JbdOptions | None = None) -> JbdState:
    A = aslinearoperator(A)
    M = aslinearoperator(M)
    opts = opts or JbdOptions()
    if A.ncols != M.ncols:
        raise DimensionError(f"A has {A.ncols} columns but M has {M.ncols}")
    b = np.asarray(b, dtype=float)
    if b.shape != (A.nrows,):
        raise DimensionError(f"b has shape {b.shape}, A has {A.nrows} rows")
    beta = float(np.linalg.norm(b))
    if beta == 0.0:
        raise ValueError("b is zero; there is nothing to reconstruct")
    m, p, n = A.nrows, M.nrows, A.ncols
    projector = _CholeskyProjector(A, M) if _wants_cholesky(A, M, opts) else None
    return JbdState(
        A=A, M=M, b=b, beta=beta,
        U=(b / beta)[:, None], Vt=np.zeros((m + p, 0)), Z=np.zeros((n, 0)),
        B=np.zeros((1, 0)), Bhat=np.zeros((0, 0)), Uhat=np.zeros((p, 0)),
        opts=opts, projector=projector,
    )


def _orthogonalize(Q, v, *extra):
    """Two passes of classical Gram-Schmidt; the same coefficients update ``extra``."""
    coeffs = np.zeros(Q.shape[1])
    vecs = [e for e, _ in extra]
    for _ in range(2 if Q.shape[1] else 0):
        h = Q.T @ v
        v = v - Q @ h
        vecs = [e - E @ h for e, (_, E) in zip(vecs, extra)]
        coeffs += h
    return v, coeffs, vecs


def _complement(Q, size: int) -> np.ndarray:
    """A unit vector orthogonal to the columns of ``Q`` (deterministic)."""
    for j in range(size):
        e = np.zeros(size)
        e[(j * 7919) % size] = 1.0
        v, _, _ = _orthogonalize(Q, e)
        nv = np.linalg.norm(v)
        if nv > 1e-6:
            return v / nv
    raise NumericalBreakdown("no orthogonal complement left")


def _apply_c(state: JbdState, z):
    return np.concatenate([state.A.apply(z), state.M.apply(z)])


def _project(state: JbdState, u):
    """Minimizer of ``||C z - [u; 0]||`` and the LSQR iteration count."""
    if state.projector is not None:
        return state.projector.solve(u)
    C = vstack(state.A, state.M, 1.0)
    rhs = np.concatenate([u, np.zeros(state.p)])
    res = lsqr(C, rhs, state.opts.lsqr)
    if not res.converged and state.opts.strict_lsqr:
        raise NumericalBreakdown(
            f"LSQR projection did not converge in {res.iters} iterations at JBD step {state.k + 1}"
        )
    return res.x, res.iters


def jbd_step(state: JbdState) -> JbdState:
    """Extend the factorization by one column; sets ``state.exhausted`` on breakdown."""
    if state.exhausted:
        return state
    k = state.k
    if k >= state.n:
        state.exhausted = True
        return state
    m = state.m
    u_k = state.U[:, k]
    z, iters = _project(state, u_k)
    s = _apply_c(state, z)
    if not np.all(np.isfinite(s)):
        raise NumericalBreakdown(f"non-finite projection at JBD step {k + 1}")

    # alpha_k vt_k = s - beta_k vt_{k-1}, fully reorthogonalized
    t, _, (zt,) = _orthogonalize(state.Vt, s, (z, state.Z))
    alpha = float(np.linalg.norm(t))
    if alpha < BREAKDOWN_TOL:
        state.exhausted = True
        return state
    # The z recurrence divides by alpha, so errors in C Z - Vt would grow like
    # prod(1/alpha).  Rebuilding vt from z_new keeps the pair consistent.
    z_new = zt / alpha
    for _ in range(2):
        vt = _apply_c(state, z_new)
        vt, _, (z_new,) = _orthogonalize(state.Vt, vt, (z_new, state.Z))
        nrm = float(np.linalg.norm(vt))
        z_new = z_new / nrm
    vt = _apply_c(state, z_new)

    # beta_{k+1} u_{k+1} = top(vt_k) - alpha_k u_k
    top, bottom = vt[:m], vt[m:]
    r, g, _ = _orthogonalize(state.U, top)
    beta_next = float(np.linalg.norm(r))
    if beta_next < BREAKDOWN_TOL:
        u_next = _complement(state.U, m) if state.U.shape[1] < m else np.zeros(m)
        state.exhausted = True
    else:
        u_next = r / beta_next

    rh, gh, _ = _orthogonalize(state.Uhat, bottom)
    delta = float(np.linalg.norm(rh))
    if delta < BREAKDOWN_TOL:
        delta = 0.0
        uh_next = _complement(state.Uhat, state.p) if state.Uhat.shape[1] < state.p else np.zeros(state.p)
    else:
        uh_next = rh / delta

    B = np.zeros((k + 2, k + 1))
    B[: k + 1, :k] = state.B
    B[: k + 1, k] = g
    B[k + 1, k] = beta_next
    Bhat = np.zeros((k + 1, k + 1))
    Bhat[:k, :k] = state.Bhat
    Bhat[:k, k] = gh
    Bhat[k, k] = delta

    # nominal band: B has entries (k, k) and (k+1, k); Bhat has (k-1, k) and (k, k)
    off = max(np.max(np.abs(g[:k]), initial=0.0), np.max(np.abs(gh[: k - 1]), initial=0.0))
    if state.opts.band_tol is not None and off > state.opts.band_tol:
        raise NumericalBreakdown(
            f"bidiagonal structure lost at JBD step {k + 1}: off-band entry {off:.3e}"
        )

    state.Vt = np.column_stack([state.Vt, vt])
    state.Z = np.column_stack([state.Z, z_new])
    state.U = np.column_stack([state.U, u_next])
    state.Uhat = np.column_stack([state.Uhat, uh_next])
    state.B, state.Bhat = B, Bhat
    state.lsqr_iteration_counts.append(int(iters))
    state.offband.append(float(off))
    return state


@dataclass(frozen=True)
class ProjectedSolution:
    w: np.ndarray
    lam: float
    residual_norm: float
    seminorm: float


def projected_solve(state: JbdState, lam: float) -> ProjectedSolution:
    """Solve ``min ||[B; lam Bhat] w - [beta e1; 0]||``; ``lam = 0`` gives the minimal-norm ``w``."""
    k = state.k
    if k < 1:
        raise ValueError("projected_solve needs at least one JBD step")
    if not lam >= 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    rhs = np.zeros(k + 1)
    rhs[0] = state.beta
    if lam == 0.0:
        w = np.linalg.lstsq(state.B, rhs, rcond=None)[0]
    else:
        K = np.vstack([state.B, lam * state.Bhat])
        w = np.linalg.lstsq(K, np.concatenate([rhs, np.zeros(k)]), rcond=None)[0]
    return ProjectedSolution(
        w=w, lam=float(lam),
        residual_norm=float(np.linalg.norm(state.B @ w - rhs)),
        seminorm=float(np.linalg.norm(state.Bhat @ w)),
    )


def recover_x(state: JbdState, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (state.k,):
        raise DimensionError(f"w has shape {w.shape}, expected ({state.k},)")
    return state.Z @ w


@dataclass
class HybridOptions:
    max_inner: int = 60
    stabilization_tol: float = 1e-3
    stabilization_window: int = 3
    jbd: JbdOptions = field(default_factory=JbdOptions)

    def __post_init__(self):
        if self.max_inner < 1:
            raise ValueError(f"max_inner must be >= 1, got {self.max_inner}")
        if self.stabilization_window < 1 or not self.stabilization_tol > 0:
            raise ValueError("stabilization window must be >= 1 and tolerance > 0")


@dataclass
class HybridResult:
    x: np.ndarray
    lambda_star: float
    k_final: int
    inner_log: list[InnerRecord]
    flag: str
    state: JbdState
    solution: ProjectedSolution

    @property
    def residual_norm(self) -> float:
        return self.solution.residual_norm

    @property
    def seminorm(self) -> float:
        return self.solution.seminorm


def _genuine(decision: Decision) -> bool:
    return decision.status in ("root", "corner")


def hybrid_solve(A, M, b, rule, opts: HybridOptions | None = None, x_true=None,
                 outer_iter: int = 0) -> HybridResult:
    """Grow the joint bidiagonalization until the selected lambda settles.

    Only genuine decisions (a discrepancy root or an L-curve corner) count
    toward the stabilization window.  A fixed lambda never stabilizes, so the
    loop then runs to ``max_inner`` or breakdown.
    """
    opts = opts or HybridOptions()
    if not isinstance(rule, (Discrepancy, LCurve, Fixed)):
        raise TypeError(f"unsupported rule {rule!r}")
    state = jbd_init(A, M, b, opts.jbd)
    log: list[InnerRecord] = []
    decision = Decision(None, "undecided")
    prev_lam = None
    streak = 0
    cache: dict[float, ProjectedSolution] = {}

    def evaluate(lam):
        sol = projected_solve(state, lam)
        cache[lam] = sol
        return sol.residual_norm, sol.seminorm

    for _ in range(opts.max_inner):
        jbd_step(state)
        if state.exhausted and (not log or state.k == log[-1].inner_iter):
            break
        cache.clear()
        decision = rule_select(rule, evaluate)
        lam_k = decision.lam if decision.decided else 0.0
        sol = cache.get(lam_k) or projected_solve(state, lam_k)
        rel = relative_error(recover_x(state, sol.w), x_true) if x_true is not None else None
        log.append(InnerRecord(outer_iter, state.k, decision.lam, sol.residual_norm, sol.seminorm,
                               state.lsqr_iteration_counts[-1], rel))
        if _genuine(decision):
            lam = decision.lam
            if prev_lam is not None and abs(lam - prev_lam) / max(lam, 1e-14) < opts.stabilization_tol:
                streak += 1
            else:
                streak = 0
            prev_lam = lam
        else:
            streak = 0
            prev_lam = None
        if streak >= opts.stabilization_window or state.exhausted:
            break

    if state.k == 0:
        raise NumericalBreakdown("joint bidiagonalization broke down at the first step")
    if decision.decided:
        lam_star, flag = float(decision.lam), decision.status
    elif isinstance(rule, LCurve):
        grid = rule.lambda_grid
        lam_star, flag = grid[len(grid) // 2], decision.status
    else:
        lam_star, flag = 0.0, decision.status
    sol = projected_solve(state, lam_star)
    return HybridResult(recover_x(state, sol.w), lam_star, state.k, log, flag, state, sol)
