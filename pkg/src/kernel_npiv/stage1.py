"""Stage 1: conditional mean embedding with a spectral filter.

The fitted embedding at an instrument value ``z`` is a weighted sum of the
stage-1 feature maps, ``F(z) = sum_i w_i phi_X(x_i)``, with weights
``w = G k_Z(z_tilde, z)`` and ``G = g_xi(K / m) / m``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .filters import FilterError, FilterSpec, filter_from_eigh
from .kernels import KernelSpec, as_points, gram, psd_clamp_eigh

__all__ = [
    "Stage1Model",
    "fit_stage1",
    "embed_weights",
    "embedding_sq_norms",
    "DiscreteStage1",
    "fit_stage1_counts",
    "stage1_l2_error",
]


def _check_landweber(filt: FilterSpec, kernel_z: KernelSpec) -> None:
    if filt.variant == "landweber" and filt.step_tau * kernel_z.kappa_sq > 1.0 + 1e-12:
        raise FilterError("landweber requires step_tau * kappa_sq(Z) <= 1")


@dataclass(frozen=True, eq=False)
class Stage1Model:
    """A fitted stage-1 regressor.

    ``dual`` is the symmetric ``m x m`` matrix ``g_xi(K_ZZ / m) / m``.  The
    eigendecomposition of ``K_ZZ / m`` is kept so that other values of ``xi``
    can be tried with :meth:`refilter` without a second decomposition.
    """

    z_points: np.ndarray
    x_points: np.ndarray
    dual: np.ndarray
    xi: float
    kernel_z: KernelSpec
    kernel_x: KernelSpec
    filter: FilterSpec
    eig: Optional[tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.dual.shape[0]

    def refilter(self, xi: float, filt: FilterSpec | None = None) -> "Stage1Model":
        if self.eig is None:
            raise ValueError("model was fitted without a cached eigendecomposition")
        filt = filt or self.filter
        w, U = self.eig
        dual = filter_from_eigh(filt, w, U, xi) / self.m
        return Stage1Model(self.z_points, self.x_points, dual, float(xi),
                           self.kernel_z, self.kernel_x, filt, self.eig)

    def embed_weights(self, z_query) -> np.ndarray:
        return embed_weights(self, z_query)

    def x_gram(self) -> np.ndarray:
        return gram(self.kernel_x, self.x_points)


def fit_stage1(
    z,
    x,
    kernel_z: KernelSpec,
    kernel_x: KernelSpec,
    filt: FilterSpec,
    xi: float,
    keep_eig: bool = True,
) -> Stage1Model:
    """Fit the stage-1 embedding from paired samples ``(z_i, x_i)``."""
    if not xi > 0:
        raise FilterError("xi must be positive")
    Z = as_points(z, kernel_z)
    X = as_points(x, kernel_x)
    if Z.shape[0] != X.shape[0]:
        raise ValueError("z and x must have the same number of samples")
    if Z.shape[0] < 1:
        raise ValueError("stage 1 needs at least one sample")
    _check_landweber(filt, kernel_z)
    m = Z.shape[0]
    K = gram(kernel_z, Z)
    w, U = psd_clamp_eigh(K / m)
    dual = filter_from_eigh(filt, w, U, xi) / m
    return Stage1Model(Z, X, dual, float(xi), kernel_z, kernel_x, filt,
                       (w, U) if keep_eig else None)


def embed_weights(model: Stage1Model, z_query) -> np.ndarray:
    """``m x q`` weight matrix; column ``j`` represents ``F(z_query[j])``."""
    Zq = as_points(z_query, model.kernel_z)
    if Zq.shape[0] == 0:
        return np.zeros((model.m, 0))
    return model.dual @ gram(model.kernel_z, model.z_points, Zq)


def embedding_sq_norms(model: Stage1Model, W: np.ndarray) -> np.ndarray:
    """``||F(z_j)||^2`` in the X feature space for each weight column."""
    K = model.x_gram()
    return np.einsum("ij,ij->j", W, K @ W)


@dataclass(frozen=True, eq=False)
class DiscreteStage1:
    """Stage-1 fit on finite supports, stored through sufficient statistics.

    When both kernels are precomputed over finite supports, the fit depends on
    the sample only through the joint count table ``counts[z, x]``.  The
    weights returned by :meth:`atom_weights` equal the ``m``-sample weights of
    :func:`embed_weights` summed over samples sharing the same X atom.
    """

    counts: np.ndarray
    xi: float
    kernel_z: KernelSpec
    kernel_x: KernelSpec
    filter: FilterSpec
    weights: np.ndarray = field(repr=False)

    @property
    def m(self) -> int:
        return int(self.counts.sum())

    @property
    def x_points(self) -> np.ndarray:
        return np.arange(self.kernel_x.size)

    def atom_weights(self, z_query=None) -> np.ndarray:
        """``d_x x q`` weights over the X support (all Z atoms by default)."""
        if z_query is None:
            return self.weights
        return self.weights[:, as_points(z_query, self.kernel_z)]

    def embed_weights(self, z_query) -> np.ndarray:
        return self.atom_weights(z_query)

    def x_gram(self) -> np.ndarray:
        return self.kernel_x.matrix


def fit_stage1_counts(
    counts,
    kernel_z: KernelSpec,
    kernel_x: KernelSpec,
    filt: FilterSpec,
    xi: float,
) -> DiscreteStage1:
    """Fit stage 1 from a ``d_z x d_x`` joint count table.

    With ``S = K_Z^(1/2)`` and ``D = diag(n_z / m)`` the atom weights are
    ``counts^T S g(S D S) S / m``.
    """
    if not xi > 0:
        raise FilterError("xi must be positive")
    N = np.asarray(counts, dtype=float)
    if N.shape != (kernel_z.size, kernel_x.size):
        raise ValueError(f"counts must have shape {(kernel_z.size, kernel_x.size)}")
    m = N.sum()
    if m < 1:
        raise ValueError("stage 1 needs at least one sample")
    _check_landweber(filt, kernel_z)
    wz, Uz = psd_clamp_eigh(kernel_z.matrix)
    S = (Uz * np.sqrt(wz)) @ Uz.T
    D = N.sum(axis=1) / m
    w, U = psd_clamp_eigh((S * D) @ S, scale=kernel_z.kappa_sq)
    G = filter_from_eigh(filt, w, U, xi)
    weights = N.T @ S @ G @ S / m
    return DiscreteStage1(N, float(xi), kernel_z, kernel_x, filt, weights)


def stage1_l2_error(model, oracle) -> float:
    """Exact ``||F_hat - F_*||^2`` in ``L2(Z; H_X)`` on a discrete instance.

    ``model`` is a :class:`Stage1Model` whose points index the oracle supports,
    or a :class:`DiscreteStage1` fitted over them.
    """
    d_x = oracle.d_x
    z_all = np.arange(oracle.d_z)
    if isinstance(model, DiscreteStage1):
        if model.weights.shape != (d_x, oracle.d_z):
            raise ValueError("support mismatch between model and oracle")
        W = model.weights
    else:
        if model.kernel_x.family != "precomputed" or model.kernel_x.size != d_x:
            raise ValueError("stage-1 kernel_x must be precomputed over the oracle X support")
        if model.kernel_z.family != "precomputed" or model.kernel_z.size != oracle.d_z:
            raise ValueError("stage-1 kernel_z must be precomputed over the oracle Z support")
        Wm = embed_weights(model, z_all)
        # duplicates of the same atom share one feature map
        W = np.zeros((d_x, oracle.d_z))
        np.add.at(W, model.x_points, Wm)
    diff = W - oracle.cond.T
    per_z = np.einsum("xz,xz->z", diff, oracle.K_X @ diff)
    return float(np.dot(oracle.pi_z, per_z))
