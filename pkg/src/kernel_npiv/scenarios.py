"""Synthetic data generation for discrete instances and a continuous demo.

Every dataset is drawn from generators seeded by a :class:`numpy.random.SeedSequence`
built from ``(seed, *keys)``, so a given replicate of a given study is
reproducible without running the ones before it.  Stage-1 and stage-2 samples
come from separate child streams.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .oracle import DiscreteInstance

__all__ = [
    "make_rng",
    "stage_rngs",
    "DiscreteSample",
    "sample_discrete",
    "CountSample",
    "sample_discrete_counts",
    "ContinuousSample",
    "continuous_demo",
    "demo_structural_function",
    "write_dataset_csv",
]


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator for the stream identified by ``seed`` and integer ``keys``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def stage_rngs(seed: int, *keys: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent generators for stage 1 and stage 2."""
    ss = np.random.SeedSequence([int(seed), *map(int, keys)])
    s1, s2 = ss.spawn(2)
    return np.random.default_rng(s1), np.random.default_rng(s2)


def _check_sizes(m: int, n: int) -> None:
    if int(m) < 1 or int(n) < 1:
        raise ValueError(f"sample sizes must be at least 1 (got m={m}, n={n})")


@dataclass(frozen=True)
class DiscreteSample:
    """Index-valued samples: ``(z1, x1)`` for stage 1 and ``(z2, y2)`` for stage 2."""

    z1: np.ndarray
    x1: np.ndarray
    z2: np.ndarray
    y2: np.ndarray


def _draw_x(rng: np.random.Generator, cond: np.ndarray, z: np.ndarray) -> np.ndarray:
    # inverse-CDF per row, vectorised
    cdf = np.cumsum(cond, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(z.size)
    return np.minimum((cdf[z] < u[:, None]).sum(axis=1), cond.shape[1] - 1)


def sample_discrete(inst: DiscreteInstance, m: int, n: int, seed: int, *keys: int) -> DiscreteSample:
    """Draw stage-1 pairs ``(z, x)`` and stage-2 pairs ``(z, y)``.

    Stage-2 outcomes follow ``y = (T h0)(z) + sigma(z) * eps`` with standard
    normal ``eps``, so ``E[Y | Z] = T h0`` holds by construction.
    """
    _check_sizes(m, n)
    r1, r2 = stage_rngs(seed, *keys)
    z1 = r1.choice(inst.d_z, size=int(m), p=inst.pi_z)
    x1 = _draw_x(r1, inst.cond, z1)
    z2 = r2.choice(inst.d_z, size=int(n), p=inst.pi_z)
    y2 = inst.r0[z2] + inst.sigma[z2] * r2.standard_normal(int(n))
    return DiscreteSample(z1, x1, z2, y2)


@dataclass(frozen=True)
class CountSample:
    """Sufficient statistics of a discrete sample.

    ``joint[z, x]`` counts stage-1 pairs, ``n_z`` counts stage-2 instruments
    and ``y_sums[z]`` sums the stage-2 outcomes sharing instrument ``z``.
    """

    joint: np.ndarray
    n_z: np.ndarray
    y_sums: np.ndarray

    @property
    def m(self) -> int:
        return int(self.joint.sum())

    @property
    def n(self) -> int:
        return int(self.n_z.sum())


def sample_discrete_counts(inst: DiscreteInstance, m: int, n: int, seed: int, *keys: int) -> CountSample:
    """Draw the sufficient statistics of a sample directly.

    Has the same law as tallying :func:`sample_discrete`, at a cost that does
    not grow with ``m`` and ``n``: multinomial counts, and per-instrument sums
    of Gaussian outcomes drawn as ``n_z r0(z) + sigma(z) sqrt(n_z) eps``.
    """
    _check_sizes(m, n)
    r1, r2 = stage_rngs(seed, *keys)
    joint = r1.multinomial(int(m), (inst.pi_z[:, None] * inst.cond).ravel()).reshape(inst.d_z, inst.d_x)
    n_z = r2.multinomial(int(n), inst.pi_z)
    y_sums = n_z * inst.r0 + inst.sigma * np.sqrt(n_z) * r2.standard_normal(inst.d_z)
    return CountSample(joint, n_z, y_sums)


def tally(sample: DiscreteSample, inst: DiscreteInstance) -> CountSample:
    """Sufficient statistics of an explicit sample."""
    joint = np.zeros((inst.d_z, inst.d_x))
    np.add.at(joint, (sample.z1, sample.x1), 1.0)
    n_z = np.bincount(sample.z2, minlength=inst.d_z)
    y_sums = np.bincount(sample.z2, weights=sample.y2, minlength=inst.d_z)
    return CountSample(joint, n_z, y_sums)


# continuous demonstration design ------------------------------------------------

_Z_HALF_WIDTH = 3.0


def _softclip(t: np.ndarray) -> np.ndarray:
    """Smooth squashing of the real line onto ``(0, 1)``."""
    return 0.5 * (1.0 + np.tanh(t / 4.0))


def demo_structural_function(x) -> np.ndarray:
    """``ln(|16x - 8| + 1) sign(x - 0.5)`` on ``[0, 1]``, the range of ``X``."""
    x = np.asarray(x, dtype=float)
    return np.log(np.abs(16.0 * x - 8.0) + 1.0) * np.sign(x - 0.5)


@dataclass(frozen=True)
class ContinuousSample:
    z1: np.ndarray
    x1: np.ndarray
    z2: np.ndarray
    x2: np.ndarray
    y2: np.ndarray
    h0: Callable[[np.ndarray], np.ndarray]


def continuous_demo(n: int, m: int, seed: int, confounding_strength: float = 1.0) -> ContinuousSample:
    """Confounded design with a uniform instrument.

    ``Z ~ U[-3, 3]``, ``V ~ N(0, 1)``, ``X = softclip(Z + V)`` and
    ``Y = h0(X) + c V + N(0, 0.1^2)``; the confounder ``V`` is independent of
    ``Z`` so ``E[U | Z] = 0``.  The stage-2 ``x2`` values are returned only for
    comparison with a naive regression of ``Y`` on ``X``.
    """
    _check_sizes(m, n)
    r1, r2 = stage_rngs(seed)

    def draw(rng, size):
        z = rng.uniform(-_Z_HALF_WIDTH, _Z_HALF_WIDTH, size)
        v = rng.standard_normal(size)
        x = _softclip(z + v)
        y = demo_structural_function(x) + confounding_strength * v + 0.1 * rng.standard_normal(size)
        return z, x, y

    z1, x1, _ = draw(r1, int(m))
    z2, x2, y2 = draw(r2, int(n))
    return ContinuousSample(z1, x1, z2, x2, y2, demo_structural_function)


def write_dataset_csv(path, stage1: tuple, stage2: tuple) -> None:
    """Write ``split, z, x, y`` rows; stage-1 rows leave ``y`` empty.

    ``stage1`` is ``(z, x)`` and ``stage2`` is ``(z, y)`` or ``(z, x, y)``.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["split", "z", "x", "y"])
        for z, x in zip(*stage1):
            w.writerow(["1", _num(z), _num(x), ""])
        if len(stage2) == 2:
            for z, y in zip(*stage2):
                w.writerow(["2", _num(z), "", _num(y)])
        else:
            for z, x, y in zip(*stage2):
                w.writerow(["2", _num(z), _num(x), _num(y)])


def _num(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))
