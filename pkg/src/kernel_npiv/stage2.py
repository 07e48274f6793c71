"""Stage 2: Tikhonov-regularised regression of Y on the fitted embeddings."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .kernels import as_points, gram

__all__ = [
    "NpivEstimator",
    "fit_npiv",
    "predict",
    "fit_npiv_primal",
    "AtomEstimator",
    "fit_npiv_counts",
    "krr_in_HF_oracle",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class NpivEstimator:
    """Structural-function estimate ``h(x) = sum_i alpha_i k_X(x_i, x)``."""

    alpha: np.ndarray
    lam: float
    stage1: object
    n: int

    @property
    def x_points(self) -> np.ndarray:
        return self.stage1.x_points

    @property
    def kernel_x(self):
        return self.stage1.kernel_x

    def predict(self, x_query) -> np.ndarray:
        return predict(self, x_query)

    @property
    def rkhs_norm_sq(self) -> float:
        return float(self.alpha @ self.stage1.x_gram() @ self.alpha)


def _spd_solve(M: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        return cho_solve(cho_factor(M, lower=True), b)
    except LinAlgError:
        jitter = 1e-10 * np.trace(M) / M.shape[0]
        log.warning("Cholesky failed; retrying with diagonal jitter %.3e", jitter)
        M = M + jitter * np.eye(M.shape[0])
        return cho_solve(cho_factor(M, lower=True), b)


def fit_npiv(stage1, z, y, lam: float) -> NpivEstimator:
    """Fit the structural function from stage-2 pairs ``(z_i, y_i)``.

    ``J = W(z)`` holds the stage-1 weights of each stage-2 instrument and the
    coefficients are ``alpha = J [J^T K_XX J + n lam I]^(-1) y``.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    Y = np.asarray(y, dtype=float).reshape(-1)
    n = Y.size
    if n < 1:
        raise ValueError("stage 2 needs at least one sample")
    J = stage1.embed_weights(z)
    if J.shape[1] != n:
        raise ValueError("z and y must have the same number of samples")
    K = stage1.x_gram()
    M = J.T @ K @ J
    M = 0.5 * (M + M.T)
    M[np.diag_indices(n)] += n * lam
    alpha = J @ _spd_solve(M, Y)
    return NpivEstimator(alpha, float(lam), stage1, n)


def predict(est: NpivEstimator, x_query) -> np.ndarray:
    Xq = as_points(x_query, est.kernel_x)
    if Xq.shape[0] == 0:
        return np.zeros(0)
    return gram(est.kernel_x, est.x_points, Xq).T @ est.alpha


def fit_npiv_primal(stage1, z, y, lam: float) -> NpivEstimator:
    """Normal-equation form over the stage-1 points, kept as a cross-check.

    Solves ``(J J^T K / n + lam I) a = J y / n`` in ``m`` unknowns.
    """
    Y = np.asarray(y, dtype=float).reshape(-1)
    n = Y.size
    J = stage1.embed_weights(z)
    K = stage1.x_gram()
    A = J @ J.T @ K / n + lam * np.eye(J.shape[0])
    alpha = np.linalg.solve(A, J @ Y / n)
    return NpivEstimator(alpha, float(lam), stage1, n)


@dataclass(frozen=True, eq=False)
class AtomEstimator:
    """Stage-2 fit on a finite X support; ``values`` are ``h`` on the atoms."""

    coef: np.ndarray
    values: np.ndarray
    lam: float
    n: int


def fit_npiv_counts(weights, K_X, n_z, y_sums, lam: float) -> AtomEstimator:
    """Stage 2 from per-instrument sufficient statistics.

    ``weights`` is the ``d_x x d_z`` atom-weight matrix of a discrete stage-1
    fit, ``n_z`` the stage-2 count of each instrument atom and ``y_sums`` the
    corresponding sums of outcomes.  Equivalent to :func:`fit_npiv` on the
    expanded sample.
    """
    W = np.asarray(weights, dtype=float)
    n_z = np.asarray(n_z, dtype=float)
    n = float(n_z.sum())
    if n < 1:
        raise ValueError("stage 2 needs at least one sample")
    K = np.asarray(K_X, dtype=float)
    A = (W * n_z) @ W.T @ K / n
    A[np.diag_indices_from(A)] += lam
    coef = np.linalg.solve(A, W @ np.asarray(y_sums, dtype=float) / n)
    return AtomEstimator(coef, K @ coef, float(lam), int(round(n)))


def krr_in_HF_oracle(inst, z, y, lam: float) -> np.ndarray:
    """Kernel ridge regression with the exact-embedding kernel ``k_F``.

    ``k_F(z, z') = <F_*(z), F_*(z')>`` is evaluated from the true conditional
    law; the return value is the induced structural function on the X support.
    """
    zi = np.asarray(z, dtype=np.intp).reshape(-1)
    Y = np.asarray(y, dtype=float).reshape(-1)
    n = Y.size
    P = inst.cond[zi]
    K_F = P @ inst.K_X @ P.T
    c = np.linalg.solve(K_F + n * lam * np.eye(n), Y)
    return inst.K_X @ (P.T @ c)
