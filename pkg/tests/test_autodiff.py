import numpy as np
import pytest

from samplecraft import losses as L
from samplecraft.autodiff import (OPS, adjoint_mismatch, backprop_stack, central_differences, compare_gradients,
                                  finite_difference_check, forward_loss)
from samplecraft.errors import UsageError
from samplecraft.filters import FilterStack, init_kernel_basis, zero_stack
from samplecraft.program import LossContext, parse
from samplecraft.samplers import random_points


def small_stack(seed=0, n=2, m=4, iterations=2, scale=0.3, free=None):
    basis = init_kernel_basis(m, n, 0.3, 0.06)
    w = scale * np.random.default_rng(seed).standard_normal((iterations, m))
    return FilterStack(basis, w, free)


def batch(N=16, n=2, seeds=(1, 2)):
    return [random_points(N, n, s).coords for s in seeds]


def test_adjoint_filter_iteration():
    st = small_stack()
    X = random_points(24, 2, 5).coords
    op = OPS["filter_iteration"](st.weights[0], st.basis)
    assert adjoint_mismatch(op, X, seed=1) < 1e-7


def test_adjoint_filter_weights():
    st = small_stack()
    X = random_points(24, 2, 5).coords
    op = OPS["filter_weights"](X, st.basis)
    assert adjoint_mismatch(op, st.weights[0], seed=2) < 1e-7


def test_adjoint_periodogram():
    X = random_points(20, 2, 3).coords
    assert adjoint_mismatch(OPS["periodogram"](6), X, seed=3) < 1e-7


def test_adjoint_pcf():
    X = random_points(30, 2, 4).coords
    assert adjoint_mismatch(OPS["pcf_histogram"](32, 0.3, 0.01), X, seed=4) < 1e-6


def test_adjoint_losses():
    X = random_points(20, 2, 6).coords
    tasks = L.sample_gaussian_tasks(8, 2, 0)
    for fn in (lambda b, grad=False: L.discrepancy_loss(b, tasks, grad),
               lambda b, grad=False: L.spectral_loss(b, L.TargetSpectrum.builtin("bn"), 6, grad)):
        assert adjoint_mismatch(OPS["loss"]("x", fn), X, seed=5) < 1e-6


def test_backprop_loss_matches_forward():
    st = small_stack()
    b = batch()
    program = parse("bn(s) + disc(s)")
    ctx = LossContext(seed=(0,))
    loss, _ = backprop_stack(b, st, program, ctx)
    assert loss == forward_loss(b, st, program, ctx)


def test_gradient_linear_in_program():
    st = small_stack(1)
    b = batch()
    ctx = LossContext(seed=(0,))
    l1, g1 = backprop_stack(b, st, parse("aniso(s)"), ctx)
    l2, g2 = backprop_stack(b, st, parse("disc(s)"), ctx)
    l3, g3 = backprop_stack(b, st, parse("aniso(s) + disc(s)"), ctx)
    assert l3 == pytest.approx(l1 + l2, rel=1e-14)
    np.testing.assert_allclose(g3, g1 + g2, rtol=1e-12, atol=1e-15)
    l4, g4 = backprop_stack(b, st, parse("2*disc(s)"), ctx)
    assert l4 == 2 * l2
    np.testing.assert_allclose(g4, 2 * g2, rtol=1e-13, atol=0)


def test_finite_differences_small_stack():
    st = small_stack(2)
    report = finite_difference_check(batch(), st, parse("bn(s) + aniso(s) + disc(s)"), LossContext(seed=(0,)))
    assert report.passed(1e-3), report.max_rel_error


def test_finite_differences_from_identity():
    st = zero_stack(init_kernel_basis(4, 2, 0.3, 0.06), 2)
    report = finite_difference_check(batch(), st, parse("disc(s)"), LossContext(seed=(0,)))
    assert report.passed(1e-3), report.max_rel_error


def test_finite_differences_with_fixed_dim():
    st = small_stack(3, n=3, free=[True, True, False])
    b = batch(n=3)
    report = finite_difference_check(b, st, parse("disc(proj(0, 1, grid(2, s)))"), LossContext(seed=(0,)))
    assert report.passed(1e-3), report.max_rel_error
    _, g = backprop_stack(b, st, parse("disc(grid(2, s))"), LossContext(seed=(0,)))
    assert np.all(np.isfinite(g))


def test_central_differences_quadratic():
    theta = np.arange(6.0).reshape(2, 3) - 2.5
    num = central_differences(lambda t: float(np.sum(t ** 2)), theta, 1e-4)
    np.testing.assert_allclose(num, 2 * theta, rtol=1e-9)
    assert compare_gradients(2 * theta, num).passed(1e-6)


def test_compare_gradients_flags_mismatch():
    r = compare_gradients(np.ones(3), np.array([1.0, 1.0, 2.0]))
    assert r.max_rel_error == pytest.approx(1.0) and not r.passed()
    with pytest.raises(UsageError):
        central_differences(lambda t: 0.0, np.zeros(2), 0.0)


def test_dimension_mismatch():
    with pytest.raises(UsageError):
        backprop_stack(batch(n=3), small_stack(), parse("bn(s)"), LossContext())
    with pytest.raises(UsageError):
        backprop_stack([], small_stack(), parse("bn(s)"), LossContext())
