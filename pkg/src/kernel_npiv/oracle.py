"""Exact population quantities for finite-support NPIV instances.

On a finite support every operator of the model is a small matrix.  Operators
acting on the X feature space are represented after conjugation by
``K_X^(1/2)``, so their eigenvalues coincide with those of the corresponding
covariance operators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

from .kernels import KernelSpec, psd_clamp_eigh

__all__ = [
    "DiscreteInstance",
    "InstanceError",
    "InstanceTheory",
    "ExactStage1",
    "operator_T",
    "min_norm_solution",
    "covariance_spectra",
    "link_parameters",
    "effective_dimension",
    "exact_errors",
    "reference_instance",
    "identity_instance",
    "power_link_instance",
    "rate_instance",
    "smooth_cme_instance",
    "random_instance",
    "save_instance",
    "load_instance",
    "INSTANCE_HEADER",
]

SV_CUTOFF = 1e-10
EIG_CUTOFF = 1e-12
INSTANCE_HEADER = "# kernel-npiv instance v1"


class InstanceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteInstance:
    """Finite-support NPIV population.

    ``cond[z, x]`` is ``P(X = x | Z = z)``; ``sigma[z]`` is the standard
    deviation of the Gaussian stage-2 noise given ``Z = z``.  ``K_X`` and
    ``K_Z`` are Gram matrices over the supports (identity by default).
    """

    pi_z: np.ndarray
    cond: np.ndarray
    h0: np.ndarray
    sigma: np.ndarray
    K_X: np.ndarray
    K_Z: np.ndarray
    x_support: np.ndarray
    z_support: np.ndarray
    name: str = "instance"
    smoothness: Optional[dict] = field(default=None)

    @classmethod
    def build(cls, pi_z, cond, h0, sigma=1.0, K_X=None, K_Z=None,
              x_support=None, z_support=None, name="instance", smoothness=None):
        cond = np.array(cond, dtype=float)
        if cond.ndim != 2:
            raise InstanceError("cond must be a d_z x d_x matrix")
        d_z, d_x = cond.shape
        pi_z = np.array(pi_z, dtype=float).reshape(-1)
        h0 = np.array(h0, dtype=float).reshape(-1)
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (d_z,)).copy()
        K_X = np.eye(d_x) if K_X is None else np.array(K_X, dtype=float)
        K_Z = np.eye(d_z) if K_Z is None else np.array(K_Z, dtype=float)
        x_support = np.arange(d_x, dtype=float) if x_support is None else np.asarray(x_support, dtype=float)
        z_support = np.arange(d_z, dtype=float) if z_support is None else np.asarray(z_support, dtype=float)
        inst = cls(pi_z, cond, h0, sigma, K_X, K_Z, x_support, z_support, name, smoothness)
        inst.validate()
        for a in (pi_z, cond, h0, sigma, K_X, K_Z, x_support, z_support):
            a.setflags(write=False)
        return inst

    def validate(self) -> None:
        d_z, d_x = self.cond.shape
        if self.pi_z.shape != (d_z,):
            raise InstanceError(f"pi_z must have length {d_z}")
        if self.h0.shape != (d_x,):
            raise InstanceError(f"h0 must have length {d_x}")
        if np.any(self.pi_z < 0) or abs(self.pi_z.sum() - 1.0) > 1e-12:
            raise InstanceError("pi_z must be a probability vector")
        if np.any(self.cond < 0) or np.any(np.abs(self.cond.sum(axis=1) - 1.0) > 1e-12):
            raise InstanceError("rows of cond must be probability vectors")
        if np.any(self.sigma < 0):
            raise InstanceError("sigma must be non-negative")
        if self.K_X.shape != (d_x, d_x) or self.K_Z.shape != (d_z, d_z):
            raise InstanceError("K_X / K_Z shapes do not match the supports")
        if len(self.x_support) != d_x or len(self.z_support) != d_z:
            raise InstanceError("support labels do not match cond")
        # the kernel specs validate symmetry and PSD
        KernelSpec.precomputed(self.K_X)
        KernelSpec.precomputed(self.K_Z)

    @property
    def d_x(self) -> int:
        return self.cond.shape[1]

    @property
    def d_z(self) -> int:
        return self.cond.shape[0]

    @cached_property
    def pi_x(self) -> np.ndarray:
        return self.pi_z @ self.cond

    @cached_property
    def kernel_x(self) -> KernelSpec:
        return KernelSpec.precomputed(self.K_X)

    @cached_property
    def kernel_z(self) -> KernelSpec:
        return KernelSpec.precomputed(self.K_Z)

    @property
    def T(self) -> np.ndarray:
        return self.cond

    @cached_property
    def r0(self) -> np.ndarray:
        return self.cond @ self.h0

    @cached_property
    def h_star(self) -> np.ndarray:
        return min_norm_solution(self)

    @cached_property
    def K_X_sqrt(self) -> np.ndarray:
        w, U = psd_clamp_eigh(self.K_X)
        return (U * np.sqrt(w)) @ U.T

    def replace(self, **changes) -> "DiscreteInstance":
        fields = dict(pi_z=self.pi_z, cond=self.cond, h0=self.h0, sigma=self.sigma,
                      K_X=self.K_X, K_Z=self.K_Z, x_support=self.x_support,
                      z_support=self.z_support, name=self.name, smoothness=self.smoothness)
        fields.update(changes)
        return DiscreteInstance.build(**fields)


@dataclass
class InstanceTheory:
    gamma0: float
    gamma1: float
    c_f: int
    eig_x: np.ndarray
    eig_f: np.ndarray
    shared_basis: bool
    smoothness: Optional[dict] = None


def operator_T(inst: DiscreteInstance) -> tuple[np.ndarray, np.ndarray]:
    """The conditional expectation matrix and ``r0 = T h0``."""
    return inst.cond, inst.r0


def _pinv(A: np.ndarray) -> np.ndarray:
    if A.size == 0:
        return A.T.copy()
    return np.linalg.pinv(A, rcond=SV_CUTOFF)


def min_norm_solution(inst: DiscreteInstance) -> np.ndarray:
    """Values on the X support of the minimum RKHS-norm solution of ``T h = r0``.

    Only instrument atoms with positive probability constrain the solution.
    """
    keep = inst.pi_z > 0
    A = inst.cond[keep]
    r = inst.r0[keep]
    K = inst.K_X
    v = K @ A.T @ (_pinv(A @ K @ A.T) @ r)
    resid = np.linalg.norm(A @ v - r)
    if resid > 1e-8 * max(1.0, np.linalg.norm(r)):
        raise InstanceError(f"integral equation infeasible (residual {resid:.3e})")
    return v


def _sorted_positive(M: np.ndarray) -> np.ndarray:
    w, _ = psd_clamp_eigh(M, scale=max(float(np.max(np.abs(np.diag(M)))), 1e-300))
    w = np.sort(w)[::-1]
    if w.size == 0 or w[0] <= 0:
        return np.zeros(0)
    return w[w > EIG_CUTOFF * w[0]]


def covariance_operators(inst: DiscreteInstance) -> tuple[np.ndarray, np.ndarray]:
    """``K^(1/2) diag(pi_x) K^(1/2)`` and ``K^(1/2) B K^(1/2)`` with ``B = P^T diag(pi_z) P``."""
    S = inst.K_X_sqrt
    C_X = (S * inst.pi_x) @ S
    B = (inst.cond.T * inst.pi_z) @ inst.cond
    C_F = S @ B @ S
    return 0.5 * (C_X + C_X.T), 0.5 * (C_F + C_F.T)


def covariance_spectra(inst: DiscreteInstance) -> tuple[np.ndarray, np.ndarray]:
    """Descending non-zero eigenvalues of ``C_X`` and ``C_F``."""
    C_X, C_F = covariance_operators(inst)
    return _sorted_positive(C_X), _sorted_positive(C_F)


def link_parameters(inst: DiscreteInstance) -> InstanceTheory:
    """Envelope estimate of the link exponents ``(gamma0, gamma1)``.

    Sorted eigenvalues are paired index by index.  ``gamma1`` is the largest
    exponent with ``mu_F <= mu_X^gamma1`` on every pair and ``gamma0`` the
    smallest with ``mu_X^gamma0 <= mu_F`` on every pair in the range of
    ``C_F``.  The two coincide with the operator inequalities when ``C_X`` and
    ``C_F`` commute; otherwise ``shared_basis`` is False and the values are an
    approximation.  Pairs with ``mu_X = 1`` carry no information and are
    skipped.
    """
    C_X, C_F = covariance_operators(inst)
    eig_x = _sorted_positive(C_X)
    eig_f = _sorted_positive(C_F)
    if eig_x.size < 2 or eig_f.size < 2:
        raise InstanceError("need at least two non-zero eigenvalues in each spectrum")
    if eig_x[0] > 1.0 + 1e-12:
        raise InstanceError("C_X has eigenvalues above 1; rescale K_X before fitting exponents")
    k = eig_f.size
    mx, mf = eig_x[:k], eig_f[:k]
    use = mx < 1.0 - 1e-12
    if use.sum() < 1:
        raise InstanceError("no eigenvalue pair below 1")
    ratios = np.log(mf[use]) / np.log(mx[use])
    gamma1 = max(1.0, float(ratios.min()))
    gamma0 = max(gamma1, float(ratios.max()))
    comm = C_X @ C_F - C_F @ C_X
    shared = bool(np.abs(comm).max() <= 1e-10 * max(1.0, np.abs(C_X).max() * np.abs(C_F).max()))
    c_f = int(eig_f.size < eig_x.size)
    return InstanceTheory(gamma0, gamma1, c_f, eig_x, eig_f, shared, inst.smoothness)


def effective_dimension(eigs, lam: float) -> float:
    """``sum_i mu_i / (mu_i + lam)``."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    mu = np.asarray(eigs, dtype=float)
    return float(np.sum(mu / (mu + lam)))


def exact_errors(inst: DiscreteInstance, h_values) -> dict:
    """Squared ``L2(X)``, projected (pseudo-metric) and RKHS distances to ``h*``."""
    h = np.asarray(h_values, dtype=float).reshape(-1)
    if h.shape != (inst.d_x,):
        raise InstanceError(f"expected {inst.d_x} values, got {h.shape[0]}")
    d = h - inst.h_star
    l2x = float(np.dot(inst.pi_x, d * d))
    Td = inst.cond @ d
    pseudo = float(np.dot(inst.pi_z, Td * Td))
    rkhs = float(d @ _pinv(inst.K_X) @ d)
    return {"l2x": l2x, "pseudo": pseudo, "rkhs": rkhs}


class ExactStage1:
    """Stage-1 stand-in whose embeddings are the true conditional weights."""

    def __init__(self, inst: DiscreteInstance):
        self.inst = inst
        self.kernel_x = inst.kernel_x
        self.kernel_z = inst.kernel_z
        self.x_points = np.arange(inst.d_x)

    def embed_weights(self, z_query) -> np.ndarray:
        z = np.asarray(z_query, dtype=np.intp).reshape(-1)
        return self.inst.cond[z].T.copy()

    def x_gram(self) -> np.ndarray:
        return self.inst.K_X


# instance constructors ---------------------------------------------------------

def reference_instance(sigma: float = 1.0) -> DiscreteInstance:
    """Three X atoms, two instruments; ``h0`` has a null-space component."""
    cond = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5]]
    return DiscreteInstance.build([0.5, 0.5], cond, [2.0, -1.0, 0.0], sigma=sigma, name="reference")


def identity_instance(pi, h0, sigma=1.0, K=None, name="identity", smoothness=None) -> DiscreteInstance:
    """``X = Z`` on a common support with marginal ``pi``."""
    pi = np.asarray(pi, dtype=float)
    d = pi.size
    return DiscreteInstance.build(pi, np.eye(d), h0, sigma=sigma, K_X=K, K_Z=K,
                                  name=name, smoothness=smoothness)


def rate_instance(d: int = 200, decay_delta: float = 0.1, sigma: float = 0.5, seed: int = 0) -> DiscreteInstance:
    """Identity instance with ``pi_i ~ 1/i`` and ``h0_i^2 ~ i^(-1-decay_delta)``.

    With ``K = I`` the eigenvalues of ``C_X`` are the atom masses, so their
    ``1/i`` profile puts the capacity exponent at one, and the slowly decaying
    ``h0`` of bounded RKHS norm puts the source exponent at its smallest
    value, one.  Signs of ``h0`` are random.
    """
    i = np.arange(1, d + 1, dtype=float)
    pi = 1.0 / i
    pi /= pi.sum()
    rng = np.random.default_rng(seed)
    h0 = rng.choice([-1.0, 1.0], size=d) * i ** (-(1.0 + decay_delta) / 2.0)
    return identity_instance(pi, h0, sigma=sigma, name="rate",
                             smoothness={"beta_x": 1.0, "p_x": 1.0})


def _lazy_cycle(d: int, laziness: float = 0.5) -> np.ndarray:
    P = laziness * np.eye(d)
    idx = np.arange(d)
    P[idx, (idx + 1) % d] += 0.5 * (1 - laziness)
    P[idx, (idx - 1) % d] += 0.5 * (1 - laziness)
    return P


def power_link_instance(d: int = 7, power: float = 2.0, sigma: float = 1.0, seed: int = 0) -> DiscreteInstance:
    """Instance with ``C_F = C_X^power`` in a shared eigenbasis.

    ``cond`` is a symmetric, doubly stochastic PSD smoothing matrix ``P`` with
    uniform marginals.  With ``K_X = d Q`` for ``Q`` commuting with ``P`` one
    gets ``C_X = Q`` and ``C_F = Q P^2``, so ``Q = P^(2/(power-1))`` gives
    ``C_F = C_X^power``.
    """
    if not power > 1:
        raise InstanceError("power must exceed 1")
    P = _lazy_cycle(d)
    w, U = np.linalg.eigh(P)
    w = np.clip(w, 0.0, None)
    q = w ** (2.0 / (power - 1))
    K = d * (U * q) @ U.T
    rng = np.random.default_rng(seed)
    h0 = rng.standard_normal(d)
    return DiscreteInstance.build(np.full(d, 1.0 / d), P, h0, sigma=sigma, K_X=K,
                                  name=f"power_link_{power}")


def smooth_cme_instance(
    d_z: int = 24,
    d_x: int = 6,
    kernel_decay: float = 2.0,
    coef_decay: float = 4.0,
    sigma: float = 1.0,
    seed: int = 0,
) -> DiscreteInstance:
    """Shared-eigenbasis instance where the CME is very smooth in ``z``.

    ``K_Z`` has eigenvalues ``~ i^(-kernel_decay)`` in a cosine basis of the Z
    grid (uniform ``pi_z``), and each column of ``cond`` (a function of ``z``)
    has coefficients decaying like ``i^(-coef_decay)`` in that basis, so the
    source exponent of the CME is far above Tikhonov's qualification.
    """
    rng = np.random.default_rng(seed)
    z = (np.arange(d_z) + 0.5) / d_z
    # orthonormal cosine basis under the uniform measure on the grid
    B = np.stack([np.cos(np.pi * i * z) for i in range(d_z)], axis=1)
    B[:, 0] = 1.0
    B[:, 1:] *= math.sqrt(2.0)
    Q = B / math.sqrt(d_z)  # DCT-II columns, orthonormal on the midpoint grid
    mu = (np.arange(1, d_z + 1, dtype=float)) ** (-kernel_decay)
    mu /= mu[0]
    K_Z = d_z * (Q * mu) @ Q.T
    K_Z *= 1.0 / np.max(np.diag(K_Z))
    # smooth non-negative columns summing to one across x
    coefs = rng.standard_normal((d_z, d_x)) * (np.arange(1, d_z + 1, dtype=float) ** (-coef_decay))[:, None]
    coefs[0] = 0.0
    F = Q @ coefs * math.sqrt(d_z)
    F = F / (np.abs(F).max() * 2.0 * d_x)
    cond = 1.0 / d_x + F - F.mean(axis=1, keepdims=True)
    cond = np.clip(cond, 0.0, None)
    cond /= cond.sum(axis=1, keepdims=True)
    h0 = rng.standard_normal(d_x)
    return DiscreteInstance.build(np.full(d_z, 1.0 / d_z), cond, h0, sigma=sigma, K_Z=K_Z,
                                  z_support=z, name="smooth_cme",
                                  smoothness={"kernel_decay": kernel_decay, "coef_decay": coef_decay})


def random_instance(rng: np.random.Generator, d_x: int, d_z: int, kernel: str = "random",
                    sigma: float = 1.0) -> DiscreteInstance:
    """Random instance with Dirichlet rows and (optionally) a random PSD ``K_X``."""
    pi_z = rng.dirichlet(np.ones(d_z))
    cond = rng.dirichlet(np.full(d_x, 0.7), size=d_z)
    h0 = rng.standard_normal(d_x)
    if kernel == "identity":
        K = np.eye(d_x)
    else:
        A = rng.standard_normal((d_x, d_x))
        K = A @ A.T / d_x + 0.05 * np.eye(d_x)
        s = np.sqrt(np.diag(K))
        K = K / np.outer(s, s)
    return DiscreteInstance.build(pi_z, cond, h0, sigma=sigma, K_X=K, name="random")


# plain-text serialization ------------------------------------------------------

_SECTIONS = ("x_support", "z_support", "pi_z", "cond", "h0", "sigma", "K_X", "K_Z")
_REQUIRED = ("pi_z", "cond", "h0")


def _fmt(v: float) -> str:
    return repr(float(v))


def save_instance(inst: DiscreteInstance, path) -> None:
    lines = [INSTANCE_HEADER, f"name {inst.name}"]

    def block(label, M):
        lines.append(f"[{label}]")
        M = np.atleast_2d(M)
        for row in M:
            lines.append(" ".join(_fmt(v) for v in row))

    block("x_support", inst.x_support[None, :])
    block("z_support", inst.z_support[None, :])
    block("pi_z", inst.pi_z[None, :])
    block("cond", inst.cond)
    block("h0", inst.h0[None, :])
    block("sigma", inst.sigma[None, :])
    block("K_X", inst.K_X)
    block("K_Z", inst.K_Z)
    Path(path).write_text("\n".join(lines) + "\n")


def load_instance(path) -> DiscreteInstance:
    """Parse an instance file; errors carry the file name and line number."""
    path = Path(path)
    if not path.is_file():
        raise InstanceError(f"instance file not found: {path}")
    text = path.read_text().splitlines()
    if not text or text[0].strip() != INSTANCE_HEADER:
        raise InstanceError(f"{path}:1: missing header line {INSTANCE_HEADER!r}")
    name = path.stem
    blocks: dict[str, list[list[float]]] = {}
    current = None
    for lineno, raw in enumerate(text[1:], start=2):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("name "):
            name = line[5:].strip()
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in _SECTIONS:
                raise InstanceError(f"{path}:{lineno}: unknown section [{current}]")
            if current in blocks:
                raise InstanceError(f"{path}:{lineno}: duplicate section [{current}]")
            blocks[current] = []
            continue
        if current is None:
            raise InstanceError(f"{path}:{lineno}: data outside of a section")
        try:
            blocks[current].append([float(t) for t in line.split()])
        except ValueError:
            raise InstanceError(f"{path}:{lineno}: malformed number in [{current}]") from None
    for key in _REQUIRED:
        if key not in blocks:
            raise InstanceError(f"{path}: missing section [{key}]")
    mats = {}
    for key, rows in blocks.items():
        if len({len(r) for r in rows}) > 1:
            raise InstanceError(f"{path}: ragged rows in [{key}]")
        mats[key] = np.array(rows, dtype=float)
    vec = lambda k: mats[k].reshape(-1) if k in mats else None  # noqa: E731
    try:
        return DiscreteInstance.build(
            vec("pi_z"), mats["cond"], vec("h0"),
            sigma=vec("sigma") if "sigma" in mats else 1.0,
            K_X=mats.get("K_X"), K_Z=mats.get("K_Z"),
            x_support=vec("x_support"), z_support=vec("z_support"), name=name,
        )
    except (InstanceError, ValueError) as exc:
        raise InstanceError(f"{path}: {exc}") from None
