import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from kernel_npiv.filters import (
    FilterError,
    FilterSpec,
    filter_psd,
    filter_residual,
    filter_scalar,
    landweber_steps,
    verify_filter_conditions,
)

ALL = [FilterSpec.tikhonov(), FilterSpec.landweber(1.0), FilterSpec.pcr(),
       FilterSpec.iterated_tikhonov(3), FilterSpec.gradient_flow()]


def landweber_by_iteration(tau, x, k):
    return tau * sum((1 - tau * x) ** i for i in range(k))


def iterated_by_recursion(nu, x, xi):
    g1 = 1.0 / (x + xi)
    g = g1
    for _ in range(nu - 1):
        g = (1.0 + xi * g) * g1
    return g


def test_tikhonov_value():
    assert filter_scalar(FilterSpec.tikhonov(), 1.0, 1.0) == 0.5


def test_landweber_four_steps():
    # 1 + 0.5 + 0.25 + 0.125
    assert filter_scalar(FilterSpec.landweber(1.0), 0.5, 0.25) == pytest.approx(1.875, rel=1e-14)
    assert landweber_by_iteration(1.0, 0.5, 4) == 1.875


def test_pcr_thresholds_below_xi():
    assert filter_scalar(FilterSpec.pcr(), 0.3, 0.5) == 0.0
    assert filter_scalar(FilterSpec.pcr(), 0.5, 0.5) == 2.0  # tie kept
    assert filter_scalar(FilterSpec.pcr(), 0.0, 0.5) == 0.0


def test_gradient_flow_value():
    assert filter_scalar(FilterSpec.gradient_flow(), 1.0, 1.0) == pytest.approx(1 - math.exp(-1), rel=1e-14)
    assert filter_scalar(FilterSpec.gradient_flow(), 0.0, 0.25) == 4.0


def test_iterated_limit_at_zero():
    assert filter_scalar(FilterSpec.iterated_tikhonov(3), 0.0, 0.5) == pytest.approx(6.0, rel=1e-14)


@pytest.mark.parametrize("t", [1e-12, 1e-9, 3e-7, 9.9e-7, 1.1e-6, 1e-4])
def test_removable_singularities_against_high_precision(t):
    mpmath.mp.dps = 50
    xi = 0.3
    x = t * xi
    gf = (1 - mpmath.exp(-mpmath.mpf(x) / xi)) / x
    assert filter_scalar(FilterSpec.gradient_flow(), x, xi) == pytest.approx(float(gf), rel=1e-12)
    for nu in (2, 3, 5):
        X, XI = mpmath.mpf(x), mpmath.mpf(xi)
        ref = ((X + XI) ** nu - XI ** nu) / (X * (X + XI) ** nu)
        assert filter_scalar(FilterSpec.iterated_tikhonov(nu), x, xi) == pytest.approx(float(ref), rel=1e-12)


def test_landweber_steps_never_exceed_inverse_xi():
    for xi in np.linspace(0.01, 1.5, 300):
        k = landweber_steps(xi)
        assert k >= 1 and (k * xi <= 1 + 1e-9 or k == 1)
    assert landweber_steps(0.25) == 4
    assert landweber_steps(0.1) == 10  # 1/0.1 is 9.999... in floating point


def test_errors():
    with pytest.raises(FilterError):
        filter_scalar(FilterSpec.tikhonov(), 1.0, 0.0)
    with pytest.raises(FilterError):
        filter_scalar(FilterSpec.landweber(1.0), 1.5, 0.1)
    with pytest.raises(FilterError):
        FilterSpec("spectral_cutoff")
    with pytest.raises(FilterError):
        FilterSpec.iterated_tikhonov(0)
    with pytest.raises(FilterError):
        FilterSpec.tikhonov().const_omega(2.0)


def test_declared_constants():
    t = FilterSpec.tikhonov()
    assert (t.qualification_rho, t.const_E, t.const_omega(1.0)) == (1.0, 1.0, 1.0)
    lw = FilterSpec.landweber(0.5)
    assert lw.const_omega(0.5) == 1.0 and lw.const_omega(3.0) == 27.0
    assert FilterSpec.pcr().qualification_rho == math.inf
    it = FilterSpec.iterated_tikhonov(4)
    assert it.qualification_rho == 4 and it.const_E == 4
    assert FilterSpec.iterated_tikhonov(1).const_E == 1
    assert FilterSpec.gradient_flow().const_omega(5.0) == pytest.approx((5 / math.e) ** 5)


def test_filter_declaration_roundtrip():
    for f in ALL:
        assert FilterSpec.from_dict(f.to_dict()) == f
    with pytest.raises(FilterError):
        FilterSpec.from_dict({"variant": "tikhonov", "alpha": 1})


def test_filter_psd_diagonal_examples():
    np.testing.assert_allclose(filter_psd(FilterSpec.tikhonov(), np.diag([1.0, 0.5]), 0.5),
                               np.diag([1 / 1.5, 1.0]), atol=1e-15)
    np.testing.assert_allclose(filter_psd(FilterSpec.pcr(), np.diag([2.0, 0.1]), 1.0),
                               np.diag([0.5, 0.0]), atol=1e-15)


def test_tikhonov_matrix_matches_direct_solve(rng):
    A = rng.standard_normal((8, 8))
    M = A @ A.T / 8
    got = filter_psd(FilterSpec.tikhonov(), M, 0.1)
    np.testing.assert_allclose(got, np.linalg.inv(M + 0.1 * np.eye(8)), atol=1e-8, rtol=0)


def test_filter_psd_rejects_bad_input():
    with pytest.raises(ValueError):
        filter_psd(FilterSpec.tikhonov(), np.diag([1.0, -0.5]), 0.1)
    with pytest.raises(ValueError):
        filter_psd(FilterSpec.tikhonov(), np.ones((2, 3)), 0.1)


@given(d=st.lists(st.floats(0, 1), min_size=1, max_size=6), xi=st.floats(1e-3, 1.0))
def test_filter_psd_diagonal_commutes(d, xi):
    for f in ALL:
        got = filter_psd(f, np.diag(d), xi)
        np.testing.assert_allclose(got, np.diag(filter_scalar(f, np.array(d), xi)), rtol=1e-12, atol=1e-12)


@given(x=st.floats(1e-6, 1.0), xi=st.floats(1e-3, 1.0), tau=st.floats(0.1, 1.0))
def test_landweber_closed_form_matches_iteration(x, xi, tau):
    k = landweber_steps(xi)
    ref = landweber_by_iteration(tau, x, k)
    assert filter_scalar(FilterSpec.landweber(tau), x, xi) == pytest.approx(ref, rel=1e-10)


@given(x=st.floats(0, 1.0), xi=st.floats(1e-4, 1.0), nu=st.integers(1, 4))
def test_iterated_tikhonov_recursion(x, xi, nu):
    ref = iterated_by_recursion(nu, x, xi)
    assert filter_scalar(FilterSpec.iterated_tikhonov(nu), x, xi) == pytest.approx(ref, rel=1e-10)


@given(x=st.floats(0, 1.0), xi=st.floats(1e-4, 1.0))
def test_nu_one_is_tikhonov(x, xi):
    assert filter_scalar(FilterSpec.iterated_tikhonov(1), x, xi) == pytest.approx(
        filter_scalar(FilterSpec.tikhonov(), x, xi), rel=1e-13)


@given(x=st.floats(0, 1.0), xi=st.floats(1e-4, 1.0))
def test_residual_matches_definition(x, xi):
    for f in ALL:
        r = filter_residual(f, x, xi)
        assert r == pytest.approx(1 - x * filter_scalar(f, x, xi), abs=1e-12)
        assert 0 <= r <= 1


@pytest.mark.parametrize("f", ALL, ids=lambda f: f.label)
def test_residual_vanishes_as_xi_decreases(f):
    x = 0.2
    xis = np.logspace(0, -6, 25)
    res = np.array([abs(1 - filter_scalar(f, x, xi) * x) for xi in xis])
    assert np.all(np.diff(res) <= 1e-15)
    assert res[-1] < 1e-4


@pytest.mark.parametrize("f", ALL, ids=lambda f: f.label)
def test_filter_conditions_hold(f):
    rep = verify_filter_conditions(f)
    assert rep.passed and not rep.expected_fail


def test_tikhonov_saturates_beyond_qualification():
    rep = verify_filter_conditions(FilterSpec.tikhonov(), rho_probe=3.0)
    assert rep.expected_fail and not rep.passed and rep.as_expected
    assert rep.cond2_max > 1e6


def test_iterated_tikhonov_needs_E_equal_nu():
    # at theta = 0 the first condition reads xi * g(0) = nu
    rep = verify_filter_conditions(FilterSpec.iterated_tikhonov(3))
    assert rep.cond1_max == pytest.approx(3.0, rel=1e-9)
    assert rep.cond1_max > 1.0 + 1e-9


def test_landweber_rounding_would_break_first_condition():
    # with k = round(1/xi), xi = 0.6 gives k = 2 and xi * g(0) = 1.2 > 1
    assert 0.6 * landweber_by_iteration(1.0, 0.0, round(1 / 0.6)) > 1
    assert 0.6 * filter_scalar(FilterSpec.landweber(1.0), 0.0, 0.6) <= 1


def test_verifier_rejects_bad_grids():
    with pytest.raises(FilterError):
        verify_filter_conditions(FilterSpec.tikhonov(), xi_grid=[])
    with pytest.raises(FilterError):
        verify_filter_conditions(FilterSpec.landweber(1.0), kappa_sq=2.0)
