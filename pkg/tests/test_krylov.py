import numpy as np
import pytest
from hypothesis import given, strategies as st

from edgekit.krylov import (LsqrOptions, NumericalBreakdown, cgls_tikhonov, lsqr,
                            tikhonov_objective)
from edgekit.linops import DimensionError, FunctionOp, GradientOp, IdentityOp, MatrixOp

from conftest import gradient_dense


def test_square_system():
    A = np.array([[2.0, 0.0], [0.0, 4.0]])
    res = lsqr(A, [2.0, 4.0])
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-10)
    assert res.converged


def test_zero_rhs_returns_zero_without_iterating():
    res = lsqr(np.eye(3), np.zeros(3))
    assert res.iters == 0 and not np.any(res.x)


@given(st.integers(0, 10_000))
def test_overdetermined_matches_lstsq(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((30, 20))
    b = rng.standard_normal(30)
    res = lsqr(MatrixOp(A), b, LsqrOptions(atol=1e-14, btol=1e-14))
    ref = np.linalg.lstsq(A, b, rcond=None)[0]
    assert np.linalg.norm(res.x - ref) <= 1e-8 * np.linalg.norm(ref)


def test_rank_deficient_gives_minimum_norm():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((12, 5)) @ rng.standard_normal((5, 8))
    b = rng.standard_normal(12)
    res = lsqr(A, b, LsqrOptions(atol=1e-14, btol=1e-14))
    assert np.allclose(res.x, np.linalg.pinv(A) @ b, atol=1e-8)


def test_residual_history_decreases():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((40, 25))
    res = lsqr(A, rng.standard_normal(40))
    h = np.array(res.residual_history)
    assert len(h) == res.iters
    assert np.all(np.diff(h) <= 1e-12 * h[0])


def test_iteration_cap_is_reported():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((50, 40))
    res = lsqr(A, rng.standard_normal(50), LsqrOptions(max_iters=3))
    assert res.iters == 3 and res.flag == "hit_max_iters"


def test_non_finite_detection():
    op = FunctionOp(3, 3, lambda v: np.full(3, np.nan), lambda u: u.copy())
    with pytest.raises(NumericalBreakdown, match="iteration 1"):
        lsqr(op, np.ones(3))
    with pytest.raises(NumericalBreakdown):
        lsqr(np.eye(2), [np.inf, 1.0])


def test_dimension_and_option_errors():
    with pytest.raises(DimensionError):
        lsqr(np.eye(3), np.ones(4))
    with pytest.raises(ValueError):
        LsqrOptions(atol=0.0)
    with pytest.raises(ValueError):
        LsqrOptions(max_iters=0)


def test_cgls_tikhonov_identity_case():
    # A = I, M = I, lam = 1  ->  (I + I) x = b
    b = np.array([1.0, -2.0, 4.0])
    res = cgls_tikhonov(IdentityOp(3), IdentityOp(3), 1.0, b)
    assert np.allclose(res.x, b / 2, atol=1e-10)


@given(st.integers(0, 10_000), st.floats(1e-3, 10.0))
def test_cgls_tikhonov_matches_normal_equations(seed, lam):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((20, 16))
    L = gradient_dense(4, 4)
    b = rng.standard_normal(20)
    res = cgls_tikhonov(A, GradientOp((4, 4)), lam, b, LsqrOptions(atol=1e-14, btol=1e-14))
    ref = np.linalg.solve(A.T @ A + lam**2 * L.T @ L, A.T @ b)
    f_ref = tikhonov_objective(MatrixOp(A), MatrixOp(L), lam, b, ref)
    f_res = tikhonov_objective(MatrixOp(A), GradientOp((4, 4)), lam, b, res.x)
    assert abs(f_res - f_ref) <= 1e-10 * f_ref


def test_cgls_rejects_negative_lambda():
    with pytest.raises(ValueError):
        cgls_tikhonov(np.eye(2), np.eye(2), -1.0, np.ones(2))
