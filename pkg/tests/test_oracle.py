import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from edgekit.jbd import HybridOptions, hybrid_solve
from edgekit.krylov import LsqrOptions, cgls_tikhonov, tikhonov_objective
from edgekit.linops import DimensionError, GradientOp, MatrixOp
from edgekit.oracle import (DenseProblem, assemble, dense_tikhonov, dense_weight_sequence,
                            discrepancy_curve, oracle_suite, residual_norm, small_ct_problem,
                            svd_filter, verify_lambda_monotonicity)
from edgekit.rules import Fixed

from conftest import gradient_dense


def random_dense(seed, m=24, side=4, noise=0.05):
    rng = np.random.default_rng(seed)
    n = side * side
    A = rng.standard_normal((m, n)) @ np.diag(0.8 ** np.arange(n))
    x = rng.standard_normal(n)
    eta = noise * rng.standard_normal(m)
    return DenseProblem(A, gradient_dense(side, side), A @ x + eta, x, float(np.linalg.norm(eta)))


def test_problem_guards():
    with pytest.raises(ValueError, match="rank"):
        DenseProblem(np.zeros((3, 4)), np.eye(4)[:2], np.zeros(3))
    with pytest.raises(DimensionError):
        DenseProblem(np.eye(3), np.eye(2), np.zeros(3))
    with pytest.raises(DimensionError):
        DenseProblem(np.eye(401), np.eye(401), np.zeros(401))
    with pytest.raises(DimensionError):
        assemble(GradientOp((21, 20)))
    assert np.array_equal(assemble(GradientOp((3, 3))), gradient_dense(3, 3))


def test_identity_case():
    b = np.array([2.0, -4.0, 6.0])
    prob = DenseProblem(np.eye(3), np.eye(3), b)
    assert np.allclose(dense_tikhonov(prob, 1.0), b / 2, atol=1e-14)


def test_zero_lambda_is_least_squares():
    prob = random_dense(1)
    ls = np.linalg.lstsq(prob.A, prob.b, rcond=None)[0]
    assert np.allclose(dense_tikhonov(prob, 0.0), ls, atol=1e-10)
    with pytest.raises(ValueError):
        dense_tikhonov(prob, -1.0)


@pytest.mark.parametrize("seed", range(3))
def test_dense_matches_normal_equations_and_hybrid(seed):
    prob = random_dense(seed)
    lam = 0.3
    x = dense_tikhonov(prob, lam)
    ref = np.linalg.solve(prob.A.T @ prob.A + lam**2 * prob.M.T @ prob.M, prob.A.T @ prob.b)
    assert np.allclose(x, ref, atol=1e-8 * np.linalg.norm(ref))
    hyb = hybrid_solve(prob.A, prob.M, prob.b, Fixed(lam), HybridOptions(max_inner=16))
    A, M = MatrixOp(prob.A), MatrixOp(prob.M)
    f_d = tikhonov_objective(A, M, lam, prob.b, x)
    assert abs(tikhonov_objective(A, M, lam, prob.b, hyb.x) - f_d) <= 1e-10 * f_d


def test_svd_filter_identities():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((12, 5)) @ rng.standard_normal((5, 9))  # rank 5
    b = rng.standard_normal(12)
    assert np.allclose(svd_filter(A, b, r=5), np.linalg.pinv(A) @ b, atol=1e-10)
    assert not np.any(svd_filter(A, b, r=0))
    with pytest.raises(ValueError):
        svd_filter(A, b, r=6)
    with pytest.raises(ValueError):
        svd_filter(A, b)
    A = rng.standard_normal((10, 7))
    prob = DenseProblem(A, np.eye(7), b[:10])
    for lam in (1e-3, 0.5, 20.0):
        assert np.allclose(svd_filter(A, b[:10], lam=lam), dense_tikhonov(prob, lam), atol=1e-10)


@given(st.integers(0, 300))
def test_residual_and_seminorm_monotone(seed):
    prob = random_dense(seed, m=14, side=3)
    res, sem = [], []
    for lam in np.logspace(-3, 2, 12):
        x = dense_tikhonov(prob, lam)
        res.append(np.linalg.norm(prob.A @ x - prob.b))
        sem.append(np.linalg.norm(prob.M @ x))
    assert np.all(np.diff(res) >= -1e-10)
    assert np.all(np.diff(sem) <= 1e-10)


def test_curve_basics():
    prob = random_dense(5)
    rng = np.random.default_rng(0)
    seq = [np.ones(24), rng.uniform(size=24)]
    grid = [0.0, 1e-2, 1e-1, 1.0, 10.0]
    curves = discrepancy_curve(prob, seq, grid)
    assert curves.shape == (2, 5)
    assert np.all(np.diff(curves, axis=1) >= -1e-12)
    ls = np.linalg.norm(prob.A @ np.linalg.lstsq(prob.A, prob.b, rcond=None)[0] - prob.b)
    assert np.allclose(curves[:, 0], ls)


@given(st.integers(0, 300))
def test_nesting_for_decreasing_weights(seed):
    prob = random_dense(seed % 7)
    rng = np.random.default_rng(seed)
    d1 = rng.uniform(0.2, 1.0, 24)
    d2 = d1 * rng.uniform(0.0, 1.0, 24)
    curves = discrepancy_curve(prob, [d1, d2], np.logspace(-3, 3, 15))
    assert np.all(curves[1] <= curves[0] + 1e-10)


def test_identical_weights_identical_roots():
    prob = random_dense(2)
    d = np.full(24, 0.7)
    rep = verify_lambda_monotonicity(prob, [d, d.copy()])
    assert rep.ok and rep.roots[0] == rep.roots[1]


def test_decreased_weights_raise_the_root():
    prob = random_dense(3)
    rep = verify_lambda_monotonicity(prob, [np.ones(24), np.full(24, 0.5)])
    assert rep.ok and rep.roots[1] > rep.roots[0]
    # uniform scaling by 1/2 exactly doubles lambda
    assert rep.roots[1] == pytest.approx(2 * rep.roots[0], rel=1e-6)


def test_monotonicity_reports_violations_and_unattainable():
    prob = random_dense(3)
    rep = verify_lambda_monotonicity(prob, [np.full(24, 0.5), np.ones(24)])
    assert rep.violations == [1] and not rep.ok
    far = DenseProblem(prob.A, prob.M, prob.b, eta_norm=1e6)
    assert verify_lambda_monotonicity(far, [np.ones(24)]).statuses == ["unattainable"]


def test_full_weight_sequence_on_small_ct():
    prob, shape = small_ct_problem()
    seq = dense_weight_sequence(prob, shape, updates=3)
    assert len(seq) == 4 and np.array_equal(seq[0], np.ones(seq[0].size))
    for a, b in zip(seq, seq[1:]):
        assert np.all(b <= a)
    rep = verify_lambda_monotonicity(prob, seq)
    assert rep.ok
    roots = np.array(rep.roots)
    # the non-decreasing reading holds; the printed non-increasing one does not
    assert np.all(np.diff(roots) >= -1e-8)
    assert not np.all(np.diff(roots) <= 1e-8)


def test_oracle_suite_passes_quickly():
    t0 = time.perf_counter()
    checks = oracle_suite()
    assert time.perf_counter() - t0 < 5
    assert [c.passed for c in checks] == [True, True], [c.detail for c in checks]


def test_residual_norm_helper():
    prob = random_dense(0)
    x = dense_tikhonov(prob, 0.2)
    assert residual_norm(prob, 0.2) == pytest.approx(np.linalg.norm(prob.b - prob.A @ x))
    cg = cgls_tikhonov(prob.A, prob.M, 0.2, prob.b, LsqrOptions(atol=1e-14, btol=1e-14))
    assert np.allclose(cg.x, x, atol=1e-7)
