import math

import numpy as np
import pytest

from kernel_npiv.rates import (
    RateParams,
    case_thresholds,
    exponent_and_schedule,
    lower_bound_exponent,
    xi_exponent,
)


def test_classical_rate():
    r = exponent_and_schedule(RateParams(1, 1, 1, 1, a=10))
    assert r.case_label == "A.i"
    assert r.squared_error_exponent == pytest.approx(0.5, abs=1e-15)
    assert r.lambda_exponent == pytest.approx(0.5, abs=1e-15)


def test_smooth_rate():
    r = exponent_and_schedule(RateParams(2, 0.5, 1, 1, a=10))
    assert r.case_label == "A.i"
    assert r.squared_error_exponent == pytest.approx(0.8, abs=1e-15)
    assert r.lambda_exponent == pytest.approx(0.4, abs=1e-15)


def test_starved_stage1():
    p = RateParams(2, 0.5, 1, 1, a=0.1)
    r = exponent_and_schedule(p)
    assert r.case_label == "A.ii"
    expected = 0.1 * (p.beta_z / (p.beta_z + p.p_z)) * (2.0 / (2 - 1 + 2 * 1 + 0))
    assert r.squared_error_exponent == pytest.approx(expected, rel=1e-14)


def test_lower_bound():
    assert lower_bound_exponent(RateParams(1, 1, 1, 1)) == 0.5
    for bx, px, g in ((1, 1, 1), (2, 0.5, 1), (3, 0.3, 2)):
        p = RateParams(bx, px, g, g, a=50)
        assert lower_bound_exponent(p) == pytest.approx(exponent_and_schedule(p).squared_error_exponent, rel=1e-14)
    gap = RateParams(1, 1, 2, 1.5, a=50)
    assert lower_bound_exponent(gap) == pytest.approx(0.4)
    assert exponent_and_schedule(gap).squared_error_exponent == pytest.approx(0.3)


def test_xi_exponent():
    assert xi_exponent(RateParams(1, 1, 1, 1, beta_z=2.5, p_z=0.5)) == pytest.approx(1 / 3)


def _random_params(rng, case):
    while True:
        g1 = 1 + 2 * rng.random()
        p = dict(beta_x=1 + 2 * rng.random(), p_x=0.1 + 0.9 * rng.random(), gamma1=g1,
                 gamma0=g1 + 2 * rng.random(), c_f=int(rng.integers(2)),
                 p_z=0.1 + 0.9 * rng.random(), gamma=rng.random() * (rng.random() < 0.5))
        p["alpha_z"] = p["p_z"] + (1 - p["p_z"]) * rng.random()
        p["beta_z"] = p["alpha_z"] + (3 * rng.random() if case == "A" else 0.5 * rng.random())
        params = RateParams(**p)
        if case_thresholds(params)["case"] == case:
            return params


def _below(a):
    return float(np.nextafter(a, 0.0))


@pytest.mark.parametrize("case,keys", [("A", ["a_threshold_A"]),
                                       ("B", ["a_threshold_B_low", "a_threshold_B_high"])])
def test_continuity_at_thresholds(case, keys):
    rng = np.random.default_rng(2)
    checked = 0
    for _ in range(20):
        p = _random_params(rng, case)
        th = case_thresholds(p)
        for key in keys:
            a = th[key]
            if not math.isfinite(a) or (key == "a_threshold_B_low" and a > th["a_threshold_B_high"]):
                continue
            on = exponent_and_schedule(p.replace(a=a))
            off = exponent_and_schedule(p.replace(a=_below(a)))
            assert on.case_label != off.case_label
            assert on.squared_error_exponent == pytest.approx(off.squared_error_exponent, abs=1e-12)
            assert on.lambda_exponent == pytest.approx(off.lambda_exponent, abs=1e-12)
            checked += 1
    assert checked >= 20


def test_case_boundary_tie_goes_to_case_a():
    # alpha_z * D2 == beta_z * D1 with beta_x = p_x = gamma = 1 and c_f = 0: 2 alpha_z = 2 beta_z
    p = RateParams(1, 1, 1, 1, beta_z=1.0, alpha_z=1.0, p_z=1.0)
    assert case_thresholds(p)["case"] == "A"


def test_monotonicity():
    rng = np.random.default_rng(0)
    for case in ("A", "B"):
        for _ in range(10):
            p = _random_params(rng, case)
            grid = np.linspace(0.05, 20, 200)
            e = [exponent_and_schedule(p.replace(a=a)).squared_error_exponent for a in grid]
            assert np.all(np.diff(e) >= -1e-12)
            g0 = np.linspace(p.gamma1, p.gamma1 + 4, 50)
            e = []
            for g in g0:
                try:
                    e.append(exponent_and_schedule(p.replace(gamma0=g)).squared_error_exponent)
                except ValueError:
                    break
            assert np.all(np.diff(e) <= 1e-12)


@pytest.mark.parametrize("bad", [dict(beta_x=0.5), dict(p_x=0), dict(gamma1=3), dict(c_f=2),
                                 dict(alpha_z=0.5, p_z=0.8), dict(a=0), dict(gamma=2),
                                 dict(beta_z=0.5, alpha_z=1.0)])
def test_validation(bad):
    base = dict(beta_x=1, p_x=1, gamma0=2, gamma1=1)
    base.update(bad)
    with pytest.raises(ValueError):
        RateParams(**base)
