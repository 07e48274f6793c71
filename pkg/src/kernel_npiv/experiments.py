"""Monte-Carlo studies on discrete instances.

Each study draws its datasets from streams keyed by ``(seed, study id,
replicate, grid index)``, so a replicate can be rerun on its own and results
do not depend on execution order.  Errors are computed exactly from the
instance rather than estimated on test samples.

By default the studies fit through sufficient statistics
(:func:`~kernel_npiv.stage1.fit_stage1_counts`), which gives the same estimate
as the sample-level solvers at a cost independent of ``m`` and ``n``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .filters import FilterSpec
from .kernels import KernelSpec, gram
from .oracle import DiscreteInstance, exact_errors, link_parameters
from .rates import RateParams, exponent_and_schedule, xi_exponent
from .scenarios import continuous_demo, sample_discrete, sample_discrete_counts
from .stage1 import fit_stage1, fit_stage1_counts, stage1_l2_error
from .stage2 import fit_npiv, fit_npiv_counts

__all__ = [
    "JENSEN_TOL",
    "StudyError",
    "fit_slope",
    "fit_discrete",
    "RateReport",
    "run_rate_study",
    "MinNormReport",
    "run_minnorm_study",
    "SaturationReport",
    "run_saturation_study",
    "DemoReport",
    "run_confounding_demo",
    "write_summary",
]

log = logging.getLogger(__name__)

JENSEN_TOL = 1e-10
# stream identifiers, one per study
_RATES, _MINNORM, _SATURATION = 1, 2, 3


class StudyError(RuntimeError):
    """A replicate failed; the message names the replicate and grid point."""


def fit_slope(sizes, values) -> tuple[float, float]:
    """Decay exponent of ``values ~ sizes^(-slope)`` by OLS on the log-log curve.

    Returns ``(slope, standard_error)``.
    """
    x = np.log(np.asarray(sizes, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    if x.size < 2:
        raise ValueError("need at least two points to fit a slope")
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = x.size - 2
    if dof > 0:
        s2 = float(resid @ resid) / dof
        se = math.sqrt(s2 / float(((x - x.mean()) ** 2).sum()))
    else:
        se = float("nan")
    return -float(coef[1]), se


def _run_grid(task: Callable[[int, int], None], R: int, G: int, workers: int) -> None:
    jobs = [(r, g) for r in range(R) for g in range(G)]

    def run(job):
        r, g = job
        try:
            task(r, g)
        except Exception as exc:  # noqa: BLE001 - re-raised with context
            raise StudyError(f"replicate {r}, grid index {g}: {exc}") from exc

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, jobs))
    else:
        for job in jobs:
            run(job)


def fit_discrete(inst: DiscreteInstance, m: int, n: int, filt: FilterSpec, xi: float, lam: float,
                 seed: int, keys: Sequence[int], method: str = "counts") -> np.ndarray:
    """Draw one dataset and return the fitted structural function on the X atoms.

    ``method="samples"`` runs the sample-level solvers (``O(m^3 + n^3)``);
    ``"counts"`` the equivalent sufficient-statistic solvers.
    """
    if method == "counts":
        c = sample_discrete_counts(inst, m, n, seed, *keys)
        s1 = fit_stage1_counts(c.joint, inst.kernel_z, inst.kernel_x, filt, xi)
        return fit_npiv_counts(s1.weights, inst.K_X, c.n_z, c.y_sums, lam).values
    if method == "samples":
        s = sample_discrete(inst, m, n, seed, *keys)
        s1 = fit_stage1(s.z1, s.x1, inst.kernel_z, inst.kernel_x, filt, xi)
        return fit_npiv(s1, s.z2, s.y2, lam).predict(np.arange(inst.d_x))
    raise ValueError(f"unknown method {method!r}")


# rate study --------------------------------------------------------------------

@dataclass
class RateReport:
    n_grid: list
    m_grid: list
    a: float
    lambdas: list
    xis: list
    replicates: int
    mse: np.ndarray
    pseudo: np.ndarray
    rkhs: np.ndarray
    fitted_slope: float
    slope_se: float
    theory_slope: float
    case_label: str
    seed: int
    params: dict = field(default_factory=dict)

    @property
    def jensen_violations(self) -> int:
        return int(np.sum(self.pseudo > self.mse + JENSEN_TOL))

    @property
    def slope_gap(self) -> float:
        return abs(self.fitted_slope - self.theory_slope)

    def rows(self):
        for r in range(self.replicates):
            for g, n in enumerate(self.n_grid):
                yield {"n": n, "m": self.m_grid[g], "lambda": self.lambdas[g], "xi": self.xis[g],
                       "replicate": r, "l2x": self.mse[r, g], "pseudo": self.pseudo[r, g],
                       "rkhs": self.rkhs[r, g]}


def run_rate_study(
    inst: DiscreteInstance,
    params: RateParams,
    n_grid: Sequence[int],
    R: int,
    seed: int,
    filt: FilterSpec | None = None,
    c_xi: float = 1.0,
    c_lambda: float = 1.0,
    method: str = "counts",
    workers: int = 1,
) -> RateReport:
    """Empirical decay of the ``L2(X)`` error along ``n`` against the theory.

    ``m = round(n^a)``, ``xi = c_xi m^(-1/(beta_z + p_z))`` and
    ``lambda = c_lambda n^(-e)`` with ``e`` from the branch of the rate
    calculator selected by ``params``.
    """
    n_grid = [int(n) for n in n_grid]
    if len(n_grid) < 4 or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n_grid must be strictly increasing with at least 4 points")
    if R < 1:
        raise ValueError("R must be positive")
    filt = filt or FilterSpec.tikhonov()
    res = exponent_and_schedule(params)
    m_grid = [max(1, int(round(n ** params.a))) for n in n_grid]
    xis = [c_xi * m ** (-xi_exponent(params)) for m in m_grid]
    lams = [c_lambda * n ** (-res.lambda_exponent) for n in n_grid]
    G = len(n_grid)
    mse = np.empty((R, G))
    pseudo = np.empty((R, G))
    rkhs = np.empty((R, G))

    def task(r, g):
        h = fit_discrete(inst, m_grid[g], n_grid[g], filt, xis[g], lams[g], seed, (_RATES, r, g), method)
        e = exact_errors(inst, h)
        mse[r, g], pseudo[r, g], rkhs[r, g] = e["l2x"], e["pseudo"], e["rkhs"]

    _run_grid(task, R, G, workers)
    slope, se = fit_slope(n_grid, mse.mean(axis=0))
    return RateReport(n_grid, m_grid, params.a, lams, xis, R, mse, pseudo, rkhs, slope, se,
                      res.squared_error_exponent, res.case_label, seed,
                      {"rate": params.to_dict(), "filter": filt.to_dict(), "c_xi": c_xi,
                       "c_lambda": c_lambda, "instance": inst.name})


# minimum-norm study ------------------------------------------------------------

@dataclass
class MinNormReport:
    sizes: list
    lambdas: list
    xis: list
    replicates: int
    err_to_hstar: np.ndarray
    err_to_h0: np.ndarray
    pseudo: np.ndarray
    floor: float
    seed: int
    params: dict = field(default_factory=dict)

    @property
    def mean_err_to_hstar(self) -> np.ndarray:
        return self.err_to_hstar.mean(axis=0)

    @property
    def mean_err_to_h0(self) -> np.ndarray:
        return self.err_to_h0.mean(axis=0)

    @property
    def jensen_violations(self) -> int:
        return int(np.sum(self.pseudo > self.err_to_hstar + JENSEN_TOL))

    def rows(self):
        for r in range(self.replicates):
            for g, n in enumerate(self.sizes):
                yield {"n": n, "m": n, "lambda": self.lambdas[g], "xi": self.xis[g], "replicate": r,
                       "err_to_hstar": self.err_to_hstar[r, g], "err_to_h0": self.err_to_h0[r, g],
                       "pseudo": self.pseudo[r, g]}


def run_minnorm_study(
    inst: DiscreteInstance,
    sizes: Sequence[int],
    R: int,
    seed: int,
    xi_power: float = 0.5,
    lambda_power: float = 1.0 / 3.0,
    c_xi: float = 1.0,
    c_lambda: float = 1.0,
    filt: FilterSpec | None = None,
    method: str = "counts",
    workers: int = 1,
) -> MinNormReport:
    """Distance of the estimate to ``h*`` and to ``h0`` on a non-identified instance.

    Uses ``n = m`` at each size with ``xi = c_xi m^(-xi_power)`` and
    ``lambda = c_lambda n^(-lambda_power)``.
    """
    theory = link_parameters(inst)
    if theory.c_f != 1:
        raise ValueError("instance is identified (c_f = 0); the study needs a null space")
    floor = float(np.dot(inst.pi_x, (inst.h0 - inst.h_star) ** 2))
    if floor <= 1e-12:
        raise ValueError("h0 has no component in the null space")
    filt = filt or FilterSpec.tikhonov()
    sizes = [int(s) for s in sizes]
    xis = [c_xi * s ** (-xi_power) for s in sizes]
    lams = [c_lambda * s ** (-lambda_power) for s in sizes]
    G = len(sizes)
    e_star = np.empty((R, G))
    e_h0 = np.empty((R, G))
    pseudo = np.empty((R, G))

    def task(r, g):
        h = fit_discrete(inst, sizes[g], sizes[g], filt, xis[g], lams[g], seed, (_MINNORM, r, g), method)
        e = exact_errors(inst, h)
        e_star[r, g], pseudo[r, g] = e["l2x"], e["pseudo"]
        e_h0[r, g] = float(np.dot(inst.pi_x, (h - inst.h0) ** 2))

    _run_grid(task, R, G, workers)
    return MinNormReport(sizes, lams, xis, R, e_star, e_h0, pseudo, floor, seed,
                         {"xi_power": xi_power, "lambda_power": lambda_power, "c_xi": c_xi,
                          "c_lambda": c_lambda, "filter": filt.to_dict(), "instance": inst.name})


# saturation study --------------------------------------------------------------

@dataclass
class SaturationReport:
    filters: list
    m_grid: list
    xis: list
    replicates: int
    errors: dict  # filter label -> R x G array
    slopes: dict  # filter label -> (slope, se)
    seed: int
    params: dict = field(default_factory=dict)

    def rows(self):
        for label, E in self.errors.items():
            for r in range(self.replicates):
                for g, m in enumerate(self.m_grid):
                    yield {"filter": label, "m": m, "xi": self.xis[g], "replicate": r,
                           "stage1_error": E[r, g]}


def run_saturation_study(
    inst: DiscreteInstance,
    filters: Sequence[FilterSpec],
    m_grid: Sequence[int],
    R: int,
    seed: int,
    xi_power: float,
    c_xi: float = 1.0,
    workers: int = 1,
) -> SaturationReport:
    """Stage-1 error decay per filter under a shared ``xi = c_xi m^(-xi_power)``.

    Every filter sees the same stage-1 samples, so slope differences reflect
    the filters alone.
    """
    m_grid = [int(m) for m in m_grid]
    if len(m_grid) < 4:
        raise ValueError("m_grid needs at least 4 points")
    labels = [f.label for f in filters]
    if len(set(labels)) != len(labels):
        raise ValueError("duplicate filters")
    xis = [c_xi * m ** (-xi_power) for m in m_grid]
    G = len(m_grid)
    errs = {lab: np.empty((R, G)) for lab in labels}

    def task(r, g):
        c = sample_discrete_counts(inst, m_grid[g], 1, seed, _SATURATION, r, g)
        for f, lab in zip(filters, labels):
            s1 = fit_stage1_counts(c.joint, inst.kernel_z, inst.kernel_x, f, xis[g])
            errs[lab][r, g] = stage1_l2_error(s1, inst)

    _run_grid(task, R, G, workers)
    slopes = {lab: fit_slope(m_grid, E.mean(axis=0)) for lab, E in errs.items()}
    return SaturationReport(labels, m_grid, xis, R, errs, slopes, seed,
                            {"xi_power": xi_power, "c_xi": c_xi, "instance": inst.name,
                             "filters": [f.to_dict() for f in filters]})


# continuous demonstration ---------------------------------------------------------

@dataclass
class DemoReport:
    npiv_mse: float
    krr_mse: float
    grid: np.ndarray
    npiv_pred: np.ndarray
    krr_pred: np.ndarray
    truth: np.ndarray
    params: dict = field(default_factory=dict)

    def rows(self):
        for x, t, a, b in zip(self.grid, self.truth, self.npiv_pred, self.krr_pred):
            yield {"x": x, "h0": t, "npiv": a, "krr": b}


def run_confounding_demo(
    n: int,
    m: int,
    seed: int,
    confounding_strength: float,
    kernel_x: KernelSpec,
    kernel_z: KernelSpec,
    filt: FilterSpec,
    xi: float,
    lam: float,
    grid=None,
) -> DemoReport:
    """NPIV against kernel ridge regression of ``Y`` on ``X`` on the confounded design.

    Both fits use the stage-2 sample and the same ``lambda``; the error is the
    mean squared difference to the structural function on ``grid``.
    """
    if grid is None:
        grid = np.linspace(0.15, 0.85, 141)
    grid = np.asarray(grid, dtype=float)
    d = continuous_demo(n, m, seed, confounding_strength)
    s1 = fit_stage1(d.z1, d.x1, kernel_z, kernel_x, filt, xi)
    npiv = fit_npiv(s1, d.z2, d.y2, lam).predict(grid)
    K = gram(kernel_x, d.x2)
    K[np.diag_indices_from(K)] += d.y2.size * lam
    krr = gram(kernel_x, grid, d.x2) @ np.linalg.solve(K, d.y2)
    truth = d.h0(grid)
    return DemoReport(float(np.mean((npiv - truth) ** 2)), float(np.mean((krr - truth) ** 2)),
                      grid, npiv, krr, truth,
                      {"n": n, "m": m, "seed": seed, "confounding_strength": confounding_strength,
                       "kernel_x": kernel_x.to_dict(), "kernel_z": kernel_z.to_dict(),
                       "filter": filt.to_dict(), "xi": xi, "lambda": lam})


# output ------------------------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, rows) -> int:
    """Write dict rows with shortest round-trip floats; returns the row count."""
    rows = list(rows)
    path = Path(path)
    with path.open("w", newline="") as fh:
        if not rows:
            return 0
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(rows[0]))
        for row in rows:
            w.writerow([_cell(v) for v in row.values()])
    return len(rows)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def write_summary(path, study: str, params: dict, slopes: dict, tolerances: dict, passed) -> dict:
    """JSON summary with keys ``study, params, slopes, tolerances, pass``."""
    doc = _jsonable({"study": study, "params": params, "slopes": slopes,
                     "tolerances": tolerances, "pass": passed})
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")
    return doc
