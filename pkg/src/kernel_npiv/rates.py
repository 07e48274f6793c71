"""Theoretical rate exponents and regularization schedules.

All quantities are exponents of ``n``: the calculator returns ``e`` such that
``lambda ~ n^(-e)`` or ``||h_hat - h_*||^2 ~ n^(-e)``; constants are never
returned.  The stage-1 schedule is ``xi ~ m^(-1/(beta_z + p_z))`` with
``m = n^a``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

__all__ = [
    "RateParams",
    "RateResult",
    "exponent_and_schedule",
    "lower_bound_exponent",
    "case_thresholds",
    "xi_exponent",
]


@dataclass(frozen=True)
class RateParams:
    """Smoothness, capacity and link parameters of a scenario.

    ``gamma`` selects the error norm: 0 is ``L2(X)`` and 1 the RKHS norm.
    """

    beta_x: float
    p_x: float
    gamma0: float
    gamma1: float
    c_f: int = 0
    beta_z: float = 2.0
    p_z: float = 1.0
    alpha_z: float = 1.0
    a: float = 1.0
    gamma: float = 0.0

    def __post_init__(self) -> None:
        problems = []
        if not self.beta_x >= 1:
            problems.append("beta_x must be >= 1")
        if not 0 < self.p_x <= 1:
            problems.append("p_x must lie in (0, 1]")
        if not self.gamma0 >= 1:
            problems.append("gamma0 must be >= 1")
        if not 1 <= self.gamma1 <= self.gamma0:
            problems.append("gamma1 must lie in [1, gamma0]")
        if self.c_f not in (0, 1):
            problems.append("c_f must be 0 or 1")
        if not self.beta_z > 0:
            problems.append("beta_z must be positive")
        if not 0 < self.p_z <= 1:
            problems.append("p_z must lie in (0, 1]")
        if not self.p_z <= self.alpha_z <= 1:
            problems.append("alpha_z must lie in [p_z, 1]")
        if not self.alpha_z <= self.beta_z:
            problems.append("alpha_z must not exceed beta_z")
        if not self.a > 0:
            problems.append("a must be positive")
        if not 0 <= self.gamma <= 1:
            problems.append("gamma must lie in [0, 1]")
        if problems:
            raise ValueError("; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "RateParams":
        d = asdict(self)
        d.update(changes)
        return RateParams(**d)


@dataclass(frozen=True)
class RateResult:
    case_label: str
    lambda_exponent: float
    squared_error_exponent: float


def _denominators(p: RateParams) -> tuple[float, float]:
    """``(D1, D2)``: the well-posed and the stage-1-limited denominators."""
    c = (1.0 - p.gamma) * p.c_f
    d1 = p.beta_x - 1.0 + p.gamma0 + p.gamma0 * p.p_x / p.gamma1
    d2 = p.beta_x - 1.0 + 2.0 * p.gamma0 + c
    return d1, d2


def xi_exponent(p: RateParams) -> float:
    """Exponent ``e`` of the stage-1 schedule ``xi ~ m^(-e)``."""
    return 1.0 / (p.beta_z + p.p_z)


def case_thresholds(p: RateParams) -> dict:
    """Case indicator and the thresholds on ``a`` that separate the branches."""
    d1, d2 = _denominators(p)
    c = (1.0 - p.gamma) * p.c_f
    case_a = p.alpha_z * d2 <= p.beta_z * d1
    out = {"case": "A" if case_a else "B",
           "a_threshold_A": (p.beta_z + p.p_z) / p.beta_z * d2 / d1,
           "a_threshold_B_low": (p.beta_z + p.p_z) / p.alpha_z}
    if p.beta_z > p.alpha_z:
        out["a_threshold_B_high"] = ((p.beta_z + p.p_z) / (p.beta_z - p.alpha_z)
                                     * (p.gamma0 * (1.0 - p.p_x / p.gamma1) + c) / d1)
    else:
        out["a_threshold_B_high"] = math.inf
    return out


def exponent_and_schedule(p: RateParams) -> RateResult:
    """Upper-bound rate and stage-2 schedule for the branch selected by ``a``.

    Exact ties on any case boundary resolve to Case A and to branch i; the
    adjacent branches give equal exponents there.
    """
    d1, d2 = _denominators(p)
    target = p.beta_x - p.gamma
    th = case_thresholds(p)
    starved = p.a * p.beta_z / (p.beta_z + p.p_z)
    if th["case"] == "A":
        if p.a >= th["a_threshold_A"]:
            return RateResult("A.i", p.gamma0 / d1, target / d1)
        return RateResult("A.ii", starved * p.gamma0 / d2, starved * target / d2)
    if p.a >= th["a_threshold_B_high"]:
        return RateResult("B.i", p.gamma0 / d1, target / d1)
    if p.a >= th["a_threshold_B_low"]:
        f = p.a * (p.beta_z - p.alpha_z) / (p.beta_z + p.p_z) + 1.0
        return RateResult("B.ii", f * p.gamma0 / d2, f * target / d2)
    return RateResult("B.iii", starved * p.gamma0 / d2, starved * target / d2)


def lower_bound_exponent(p: RateParams) -> float:
    """Minimax lower-bound exponent ``beta_x / (beta_x + gamma1 - 1 + p_x)``."""
    return p.beta_x / (p.beta_x + p.gamma1 - 1.0 + p.p_x)
