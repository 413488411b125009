import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from edgekit.forward import CtGeometry, ct_build, parse_angles
from edgekit.jbd import HybridOptions, JbdOptions, NumericalBreakdown, hybrid_solve
from edgekit.krylov import LsqrOptions
from edgekit.linops import DimensionError, FunctionOp, GradientOp, MatrixOp, vec
from edgekit.outer import (OuterOptions, WeightLawViolation, WeightState, accumulate,
                           check_weight_laws, irn_tv_weights, new_weights, outer_drive,
                           total_variation)
from edgekit.rules import Discrepancy, Fixed
from edgekit.testdata import add_noise, phantom, relative_error

unit = st.floats(0, 1, allow_nan=False)


def test_constant_image_gives_unit_weights():
    assert np.array_equal(new_weights(np.full((5, 4), 2.5)), np.ones(4 * 4 + 5 * 3))


def test_unique_max_gradient_gets_zero_weight():
    img = np.zeros((4, 4))
    img[2, 1] = 1.0
    img[3, 3] = 0.5
    # the largest jump is shared by four differences, so make one stand out
    img[2, 2] = -1.0
    d = new_weights(img)
    g = np.abs(GradientOp((4, 4)).apply(vec(img)))
    assert np.flatnonzero(d == 0).tolist() == np.flatnonzero(g == g.max()).tolist()
    assert np.count_nonzero(d == 0) == 1


def test_larger_p_penalizes_less():
    img = np.random.default_rng(0).uniform(size=(6, 6))
    g = np.abs(GradientOp((6, 6)).apply(vec(img)))
    inside = (g > 0) & (g < g.max())
    assert np.all(new_weights(img, 4)[inside] > new_weights(img, 0.5)[inside])


@given(arrays(float, (5, 6), elements=st.floats(-10, 10)), st.floats(1e-3, 1e3))
def test_new_weights_rescale_invariant(img, c):
    a, b = new_weights(img), new_weights(c * img)
    assert np.all((a >= 0) & (a <= 1))
    assert np.allclose(a, b, atol=1e-12)


def test_new_weights_validation():
    with pytest.raises(ValueError):
        new_weights(np.ones((3, 3)), p=0)
    with pytest.raises(DimensionError):
        new_weights(np.ones(9))


def test_accumulate_examples():
    w = WeightState(np.array([1.0, 0.0, 0.5]), 2, (1.0,))
    assert np.array_equal(accumulate(w, np.ones(3)).d, w.d)
    out = accumulate(w, np.array([0.2, 1.0, 0.5]), lx_norm=3.0)
    assert np.array_equal(out.d, [0.2, 0.0, 0.25])
    assert out.outer_index == 3 and out.lx_history == (1.0, 3.0)
    with pytest.raises(DimensionError):
        accumulate(w, np.ones(2))


@given(st.lists(arrays(float, 12, elements=unit), min_size=1, max_size=6))
def test_accumulate_laws(factors):
    state = WeightState.initial(12)
    for f in factors:
        prev = state.d
        state = accumulate(state, f)
        assert np.all(state.d <= prev) and np.all(state.d <= f)
        assert np.all(state.d[prev == 0] == 0)
        assert np.all((state.d >= 0) & (state.d <= 1))


def test_weight_law_violations_detected():
    with pytest.raises(WeightLawViolation):
        accumulate(WeightState.initial(3), np.array([0.5, 1.5, 1.0]))
    with pytest.raises(WeightLawViolation):
        check_weight_laws(np.array([0.5, 0.0]), np.array([0.6, 0.0]))
    with pytest.raises(WeightLawViolation):
        check_weight_laws(np.array([0.5, 0.0]), np.array([0.4, 1e-9]))
    with pytest.raises(AssertionError):
        check_weight_laws(np.ones(2), np.array([-0.1, 1.0]))


def tv_direct(img):
    """Oracle: the double sum written out pixel by pixel, with missing differences taken as 0."""
    nv, nh = img.shape
    total = 0.0
    for i in range(nv):
        for j in range(nh):
            dv = img[i + 1, j] - img[i, j] if i + 1 < nv else 0.0
            dh = img[i, j + 1] - img[i, j] if j + 1 < nh else 0.0
            total += np.hypot(dv, dh)
    return total


@pytest.mark.parametrize("seed", range(4))
def test_tv_identity(seed):
    img = np.random.default_rng(seed).uniform(size=(7, 9))
    d = irn_tv_weights(img, q=1, epsilon=0.0)
    weighted = d * GradientOp(img.shape).apply(vec(img))
    tv = tv_direct(img)
    assert total_variation(img) == pytest.approx(tv, rel=1e-12)
    assert abs(weighted @ weighted - tv) <= 1e-10 * tv


def test_irn_tv_examples():
    const = np.full((5, 5), 3.0)
    assert np.allclose(irn_tv_weights(const, q=1, epsilon=1e-8), 1e-8 ** -0.25)
    assert np.array_equal(irn_tv_weights(const), np.ones(40))
    img = np.random.default_rng(1).uniform(size=(5, 5))
    assert np.array_equal(irn_tv_weights(img, q=2, epsilon=1e-3), np.ones(40))
    with pytest.raises(ValueError):
        irn_tv_weights(img, q=0.5)
    with pytest.raises(ValueError):
        irn_tv_weights(img, q=1, epsilon=-1.0)


def test_irn_tv_replicates_pixel_weight_on_both_blocks():
    img = np.random.default_rng(3).uniform(size=(4, 5))
    d = irn_tv_weights(img, epsilon=1e-6)
    L = GradientOp((4, 5))
    dv, dh = L.split(d)
    # pixel (1, 2) owns vertical entry (1, 2) and horizontal entry (1, 2)
    m = (img[2, 2] - img[1, 2]) ** 2 + (img[1, 3] - img[1, 2]) ** 2
    assert dv[1, 2] == pytest.approx((m + 1e-6) ** -0.25)
    assert dh[1, 2] == dv[1, 2]


def test_options_validation():
    with pytest.raises(ValueError):
        OuterOptions(scheme="tv")
    with pytest.raises(ValueError):
        OuterOptions(scheme="irn_tv", q=2.0)
    with pytest.raises(ValueError):
        OuterOptions(p=-1)
    with pytest.raises(ValueError):
        OuterOptions(max_outer=0)
    with pytest.raises(TypeError):
        OuterOptions(rule="dp")


def ct_problem(n=16, kind="grains", noise=1e-3, seed=0, angles="0:6:174"):
    A = ct_build(CtGeometry(n, parse_angles(angles)))
    x = vec(phantom(kind, n, seed))
    data = add_noise(A.apply(x), noise, seed)
    return A, x, data


def test_single_outer_equals_general_form_hybrid():
    A, x, data = ct_problem()
    rule = Discrepancy(np.linalg.norm(data.eta))
    out = outer_drive(A, data.b, (16, 16), x, OuterOptions(rule=rule, max_outer=1))
    ref = hybrid_solve(A, MatrixOp(GradientOp((16, 16)).as_matrix()), data.b, rule)
    assert np.array_equal(out.x, ref.x)
    free = hybrid_solve(A, GradientOp((16, 16)), data.b, rule)
    assert np.linalg.norm(out.x - free.x) <= 1e-6 * np.linalg.norm(free.x)
    assert out.final_outer == 1 and out.stop_reason == "max_outer"
    rec = out.log.outer[0]
    assert rec.lam == ref.lambda_star and rec.relative_error == relative_error(ref.x, x)
    assert np.array_equal(out.weights[0], np.ones(GradientOp((16, 16)).nrows))


def test_end_to_end_improves_and_keeps_weight_laws():
    n = 32
    A, x, data = ct_problem(n, "grains", seed=4, angles="0:3:177")
    seen = []
    opts = OuterOptions(rule=Discrepancy(np.linalg.norm(data.eta)), max_outer=8)
    out = outer_drive(A, data.b, (n, n), x, opts, callback=lambda *a: seen.append(a[0]))
    errs = [r.relative_error for r in out.log.outer]
    assert relative_error(out.x, x) < errs[0]
    assert seen == list(range(1, len(out.iterates) + 1))
    for prev, nxt in zip(out.weights, out.weights[1:]):
        check_weight_laws(prev, nxt)
    assert out.stop_reason == "max_outer" and out.x is out.iterates[-1]


def test_seminorm_decrease_returns_previous_iterate():
    A, x, data = ct_problem(16, "shepplogan", noise=1e-2, seed=1)
    opts = OuterOptions(rule=Discrepancy(np.linalg.norm(data.eta)), max_outer=20)
    out = outer_drive(A, data.b, (16, 16), x, opts)
    semis = [r.seminorm for r in out.log.outer]
    assert out.stop_reason == "seminorm_decrease"
    assert semis[-1] < semis[-2]
    assert all(b >= a for a, b in zip(semis[:-2], semis[1:-1]))
    assert out.final_outer == len(semis) - 1
    assert out.x is out.iterates[-2]


def test_irn_tv_weights_are_fresh_each_step():
    A, x, data = ct_problem()
    opts = OuterOptions(rule=Discrepancy(np.linalg.norm(data.eta)), scheme="irn_tv", max_outer=3)
    out = outer_drive(A, data.b, (16, 16), x, opts)
    assert np.array_equal(out.weights[0], np.ones(480))
    assert len(out.weights) == 3
    expected = irn_tv_weights(out.iterates[1], 1.0, None, (16, 16))
    assert np.array_equal(out.weights[2], expected)
    assert out.weights[2].max() > 1


def test_fixed_rule_uses_cgls():
    A, x, data = ct_problem()
    out = outer_drive(A, data.b, (16, 16), x, OuterOptions(rule=Fixed(0.05), max_outer=2))
    assert all(r.lambda_flag == "fixed" and r.lam == 0.05 for r in out.log.outer)
    assert not out.log.inner


def test_breakdown_carries_outer_index():
    A, x, data = ct_problem()
    op = FunctionOp(A.nrows, A.ncols, A.apply, A.apply_adjoint)
    inner = HybridOptions(jbd=JbdOptions(lsqr=LsqrOptions(max_iters=1)))
    opts = OuterOptions(rule=Discrepancy(np.linalg.norm(data.eta)), inner=inner)
    with pytest.raises(NumericalBreakdown, match="outer iteration 1"):
        outer_drive(op, data.b, (16, 16), x, opts)


def test_shape_mismatch():
    A, _, data = ct_problem()
    with pytest.raises(DimensionError):
        outer_drive(A, data.b, (8, 8))
