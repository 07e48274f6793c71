import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize_scalar

from kernel_npiv.filters import FilterSpec
from kernel_npiv.kernels import KernelSpec, gram
from kernel_npiv.oracle import ExactStage1, exact_errors, random_instance, reference_instance
from kernel_npiv.scenarios import sample_discrete, tally
from kernel_npiv.stage1 import fit_stage1, fit_stage1_counts
from kernel_npiv.stage2 import (
    fit_npiv,
    fit_npiv_counts,
    fit_npiv_primal,
    krr_in_HF_oracle,
    predict,
)

ONE = KernelSpec.precomputed([[1.0]])


def _scalar_fit():
    s1 = fit_stage1([0], [0], ONE, ONE, FilterSpec.tikhonov(), 1.0)
    return fit_npiv(s1, [0], [2.0], 1.0)


def test_scalar_example_closed_form():
    est = _scalar_fit()
    # J = 0.5 and (J K J + n lam) c = y gives c = 1.6, alpha = J c = 0.8
    np.testing.assert_allclose(est.alpha, [0.8], rtol=1e-14)
    np.testing.assert_allclose(predict(est, [0]), [0.8], rtol=1e-14)


def test_scalar_example_direct_minimisation():
    # h = a k(x~, .), embedding weight 0.5: objective (y - 0.5 a)^2 + lam a^2
    res = minimize_scalar(lambda a: (2.0 - 0.5 * a) ** 2 + a ** 2, tol=1e-12)
    assert res.x == pytest.approx(_scalar_fit().alpha[0], abs=1e-6)


def _continuous_stage1(rng, m=20, xi=0.1, filt=FilterSpec.tikhonov()):
    z = rng.standard_normal((m, 1))
    x = z + 0.3 * rng.standard_normal((m, 1))
    return fit_stage1(z, x, KernelSpec.gaussian(1.0), KernelSpec.gaussian(0.7), filt, xi)


def test_zero_target(rng):
    s1 = _continuous_stage1(rng)
    est = fit_npiv(s1, rng.standard_normal((8, 1)), np.zeros(8), 0.1)
    assert np.all(est.alpha == 0)
    assert np.all(predict(est, rng.standard_normal((5, 1))) == 0)


def test_heavy_regularisation_shrinks(rng):
    s1 = _continuous_stage1(rng)
    z, y = rng.standard_normal((8, 1)), rng.standard_normal(8)
    norms = [np.linalg.norm(fit_npiv(s1, z, y, lam).alpha) for lam in (1e-2, 1e2, 1e6)]
    assert norms[0] > norms[1] > norms[2] and norms[2] < 1e-5


def test_predict_at_training_points_and_norm(rng):
    s1 = _continuous_stage1(rng)
    est = fit_npiv(s1, rng.standard_normal((8, 1)), rng.standard_normal(8), 0.1)
    K = gram(s1.kernel_x, s1.x_points)
    np.testing.assert_allclose(predict(est, s1.x_points), K @ est.alpha, atol=1e-13)
    assert est.rkhs_norm_sq >= 0
    assert predict(est, np.zeros((0, 1))).shape == (0,)


def test_invalid_lambda(rng):
    s1 = _continuous_stage1(rng)
    with pytest.raises(ValueError):
        fit_npiv(s1, [[0.0]], [1.0], 0.0)


@given(seed=st.integers(0, 10_000), m=st.integers(1, 20), n=st.integers(1, 20),
       lam=st.floats(1e-3, 10.0), fi=st.integers(0, 2))
def test_dual_matches_primal(seed, m, n, lam, fi):
    rng = np.random.default_rng(seed)
    filt = [FilterSpec.tikhonov(), FilterSpec.pcr(), FilterSpec.gradient_flow()][fi]
    s1 = _continuous_stage1(rng, m=m, xi=0.05, filt=filt)
    z, y = rng.standard_normal((n, 1)), rng.standard_normal(n)
    q = rng.standard_normal((6, 1))
    a = predict(fit_npiv(s1, z, y, lam), q)
    b = predict(fit_npiv_primal(s1, z, y, lam), q)
    np.testing.assert_allclose(a, b, atol=1e-8)


@given(seed=st.integers(0, 10_000), c=st.floats(-5, 5))
def test_affine_equivariance(seed, c):
    rng = np.random.default_rng(seed)
    s1 = _continuous_stage1(rng, m=10)
    z, y = rng.standard_normal((7, 1)), rng.standard_normal(7)
    q = rng.standard_normal((4, 1))
    base = fit_npiv(s1, z, y, 0.1)
    scaled = fit_npiv(s1, z, c * y, 0.1)
    np.testing.assert_allclose(scaled.alpha, c * base.alpha, atol=1e-12)
    np.testing.assert_allclose(predict(scaled, q), c * predict(base, q), atol=1e-12)


@given(seed=st.integers(0, 10_000), m=st.integers(1, 80), n=st.integers(1, 80),
       lam=st.floats(1e-3, 1.0))
def test_jensen_on_discrete_fits(seed, m, n, lam):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, 5, 4)
    s = sample_discrete(inst, m, n, seed)
    s1 = fit_stage1(s.z1, s.x1, inst.kernel_z, inst.kernel_x, FilterSpec.tikhonov(), 0.1)
    est = fit_npiv(s1, s.z2, s.y2, lam)
    err = exact_errors(inst, predict(est, np.arange(inst.d_x)))
    assert err["pseudo"] <= err["l2x"] + 1e-10


@given(seed=st.integers(0, 10_000), m=st.integers(1, 50), n=st.integers(1, 50))
def test_counts_stage2_equals_sample_stage2(seed, m, n):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, 4, 3)
    s = sample_discrete(inst, m, n, seed)
    f = FilterSpec.tikhonov()
    full = fit_npiv(fit_stage1(s.z1, s.x1, inst.kernel_z, inst.kernel_x, f, 0.2), s.z2, s.y2, 0.05)
    c = tally(s, inst)
    s1c = fit_stage1_counts(c.joint, inst.kernel_z, inst.kernel_x, f, 0.2)
    comp = fit_npiv_counts(s1c.weights, inst.K_X, c.n_z, c.y_sums, 0.05)
    np.testing.assert_allclose(comp.values, predict(full, np.arange(inst.d_x)), atol=1e-9)


def test_exact_stage1_matches_hf_ridge_oracle():
    inst = reference_instance()
    s = sample_discrete(inst, 1, 40, seed=3)
    est = fit_npiv(ExactStage1(inst), s.z2, s.y2, 0.05)
    np.testing.assert_allclose(predict(est, np.arange(3)), krr_in_HF_oracle(inst, s.z2, s.y2, 0.05), atol=1e-8)


def test_hf_oracle_limits():
    inst = reference_instance()
    z = np.array([0, 1, 1])
    assert np.all(krr_in_HF_oracle(inst, z, np.zeros(3), 0.1) == 0)
    assert np.abs(krr_in_HF_oracle(inst, z, np.ones(3), 1e9)).max() < 1e-8
