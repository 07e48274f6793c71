"""Positive-definite kernels and Gram matrix assembly.

Points are handled as 2-D arrays of shape ``(n, d)``; a 1-D array is read as
``n`` scalar points.  The ``precomputed`` family works on integer indices into
a fixed finite point set whose Gram matrix is supplied up front.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "KernelSpec",
    "KernelError",
    "as_points",
    "kernel_eval",
    "gram",
    "psd_clamp_eigh",
    "PSD_TOL",
]

PSD_TOL = 1e-10
_FAMILIES = ("gaussian", "laplace", "matern", "linear", "precomputed")
_MATERN_ORDERS = (0.5, 1.5, 2.5)


class KernelError(ValueError):
    """Raised for invalid kernel declarations or incompatible points."""


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """A kernel family together with its hyperparameters.

    ``lengthscale`` may be a scalar or a per-dimension vector.  For the
    ``precomputed`` family, ``matrix`` holds the Gram matrix over the fixed
    point set and points are integer indices into it.
    """

    family: str
    lengthscale: np.ndarray | float = 1.0
    order: float = 1.5
    matrix: Optional[np.ndarray] = field(default=None, repr=False)
    kappa_sq: float = field(init=False)

    def __post_init__(self) -> None:
        if self.family not in _FAMILIES:
            raise KernelError(f"unknown kernel family {self.family!r}")
        if self.family in ("gaussian", "laplace", "matern"):
            ls = np.asarray(self.lengthscale, dtype=float)
            if np.any(ls <= 0) or not np.all(np.isfinite(ls)):
                raise KernelError("lengthscale must be positive and finite")
            object.__setattr__(self, "lengthscale", ls)
            if self.family == "matern" and float(self.order) not in _MATERN_ORDERS:
                raise KernelError("matern order must be one of 1/2, 3/2, 5/2")
            object.__setattr__(self, "kappa_sq", 1.0)
        elif self.family == "linear":
            # no a.s. bound without a bounded domain; set from data by callers
            object.__setattr__(self, "kappa_sq", float("inf"))
        else:
            if self.matrix is None:
                raise KernelError("precomputed kernel needs a Gram matrix")
            K = np.array(self.matrix, dtype=float)
            if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] == 0:
                raise KernelError("precomputed Gram must be a non-empty square matrix")
            if not np.allclose(K, K.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(K).max())):
                raise KernelError("precomputed Gram must be symmetric")
            K = 0.5 * (K + K.T)
            kappa_sq = float(np.max(np.diag(K)))
            if kappa_sq <= 0:
                raise KernelError("precomputed Gram must have a positive diagonal entry")
            if np.linalg.eigvalsh(K)[0] < -PSD_TOL * kappa_sq:
                raise KernelError("precomputed Gram is not positive semi-definite")
            K.setflags(write=False)
            object.__setattr__(self, "matrix", K)
            object.__setattr__(self, "kappa_sq", kappa_sq)

    # convenience constructors -------------------------------------------------
    @classmethod
    def gaussian(cls, lengthscale=1.0) -> "KernelSpec":
        return cls("gaussian", lengthscale=lengthscale)

    @classmethod
    def laplace(cls, lengthscale=1.0) -> "KernelSpec":
        return cls("laplace", lengthscale=lengthscale)

    @classmethod
    def matern(cls, order=1.5, lengthscale=1.0) -> "KernelSpec":
        return cls("matern", lengthscale=lengthscale, order=float(order))

    @classmethod
    def linear(cls) -> "KernelSpec":
        return cls("linear")

    @classmethod
    def precomputed(cls, matrix) -> "KernelSpec":
        return cls("precomputed", matrix=np.asarray(matrix, dtype=float))

    @classmethod
    def identity(cls, size: int) -> "KernelSpec":
        return cls("precomputed", matrix=np.eye(size))

    @property
    def size(self) -> int:
        """Number of points in the fixed set (precomputed family only)."""
        if self.matrix is None:
            raise KernelError(f"{self.family} kernel has no fixed point set")
        return self.matrix.shape[0]

    def to_dict(self) -> dict:
        out: dict = {"family": self.family}
        if self.family in ("gaussian", "laplace", "matern"):
            ls = np.asarray(self.lengthscale)
            out["lengthscale"] = float(ls) if ls.ndim == 0 else ls.tolist()
        if self.family == "matern":
            out["order"] = self.order
        if self.family == "precomputed":
            out["matrix"] = self.matrix.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        d = dict(d)
        family = d.pop("family", None)
        if family == "identity":
            return cls.identity(int(d["size"]))
        if family is None:
            raise KernelError("kernel declaration needs a 'family' key")
        unknown = set(d) - {"lengthscale", "order", "matrix"}
        if unknown:
            raise KernelError(f"unknown kernel keys: {sorted(unknown)}")
        if "matrix" in d:
            d["matrix"] = np.asarray(d["matrix"], dtype=float)
        return cls(family, **d)


def as_points(points, spec: KernelSpec | None = None) -> np.ndarray:
    """Coerce ``points`` to the canonical array layout for ``spec``."""
    if spec is not None and spec.family == "precomputed":
        idx = np.asarray(points)
        if idx.ndim == 2 and idx.shape[1] == 1:
            idx = idx[:, 0]
        if idx.ndim != 1:
            raise KernelError("precomputed kernels take a 1-D array of indices")
        if idx.size and not np.all(np.equal(np.mod(idx, 1), 0)):
            raise KernelError("precomputed kernel indices must be integers")
        idx = idx.astype(np.intp)
        if idx.size and (idx.min() < 0 or idx.max() >= spec.size):
            raise KernelError(f"index out of range for a {spec.size}-point Gram matrix")
        return idx
    P = np.asarray(points, dtype=float)
    if P.ndim == 0:
        P = P.reshape(1, 1)
    elif P.ndim == 1:
        P = P[:, None]
    elif P.ndim != 2:
        raise KernelError("points must be a 1-D or 2-D array")
    return P


def _check_dims(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> None:
    if A.shape[1] != B.shape[1]:
        raise KernelError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if spec.family in ("gaussian", "laplace", "matern"):
        ls = np.asarray(spec.lengthscale)
        if ls.ndim == 1 and ls.shape[0] != A.shape[1]:
            raise KernelError(
                f"lengthscale has {ls.shape[0]} entries but points have dimension {A.shape[1]}"
            )


def _scaled_dist(spec: KernelSpec, A: np.ndarray, B: np.ndarray, squared: bool) -> np.ndarray:
    ls = np.asarray(spec.lengthscale, dtype=float)
    A = A / ls
    B = B / ls
    diff = A[:, None, :] - B[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    return d2 if squared else np.sqrt(d2)


def _evaluate(spec: KernelSpec, A, B) -> np.ndarray:
    if spec.family == "precomputed":
        return spec.matrix[np.ix_(A, B)]
    _check_dims(spec, A, B)
    if spec.family == "linear":
        return A @ B.T
    if spec.family == "gaussian":
        return np.exp(-0.5 * _scaled_dist(spec, A, B, squared=True))
    r = _scaled_dist(spec, A, B, squared=False)
    if spec.family == "laplace":
        return np.exp(-r)
    # matern, half-integer closed forms
    if spec.order == 0.5:
        return np.exp(-r)
    if spec.order == 1.5:
        s = np.sqrt(3.0) * r
        return (1.0 + s) * np.exp(-s)
    s = np.sqrt(5.0) * r
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def kernel_eval(spec: KernelSpec, x, y) -> float:
    """Evaluate ``k(x, y)`` for a single pair of points."""
    if spec.family == "precomputed":
        i = as_points(np.atleast_1d(x), spec)
        j = as_points(np.atleast_1d(y), spec)
        if i.size != 1 or j.size != 1:
            raise KernelError("kernel_eval takes single indices")
    else:
        i = np.atleast_1d(np.asarray(x, dtype=float))[None, :]
        j = np.atleast_1d(np.asarray(y, dtype=float))[None, :]
    return float(_evaluate(spec, i, j)[0, 0])


def gram(spec: KernelSpec, rows, cols=None) -> np.ndarray:
    """Gram matrix ``M[i, j] = k(rows[i], cols[j])``.

    With ``cols`` omitted the square Gram of ``rows`` is returned; it is built
    from the upper triangle and mirrored, so it is exactly symmetric.
    """
    A = as_points(rows, spec)
    if A.shape[0] == 0:
        raise KernelError("empty point list")
    if cols is None:
        M = _evaluate(spec, A, A)
        iu = np.triu_indices(M.shape[0], 1)
        M[(iu[1], iu[0])] = M[iu]
        return M
    B = as_points(cols, spec)
    if B.shape[0] == 0:
        # zero queries are legitimate downstream (empty prediction batches)
        return np.zeros((A.shape[0], 0))
    return _evaluate(spec, A, B)


def psd_clamp_eigh(M: np.ndarray, scale: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric eigendecomposition with small negative eigenvalues clamped.

    Eigenvalues in ``[-PSD_TOL * scale, 0)`` are set to zero; anything more
    negative raises :class:`KernelError`.  ``scale`` defaults to the largest
    diagonal entry of ``M``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise KernelError("expected a square matrix")
    if scale is None:
        scale = float(np.max(np.abs(np.diag(M)))) if M.size else 0.0
    asym = np.abs(M - M.T).max() if M.size else 0.0
    if asym > PSD_TOL * max(scale, np.abs(M).max() if M.size else 0.0, 1e-300):
        raise KernelError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    tol = PSD_TOL * max(scale, 1e-300)
    if w.size and w[0] < -tol:
        raise KernelError(f"matrix is not positive semi-definite (eigenvalue {w[0]:.3e})")
    w = np.where(w < 0.0, 0.0, w)
    return w, U
