"""Random task-weight distributions and their normalization onto the simplex.

RNG streams
-----------
Every stream is a PCG64 generator seeded from ``SeedSequence(seed,
spawn_key=(stream_id,))``.  The same ``(seed, stream_id)`` pair therefore
gives the same sequence on every platform, and different stream ids are
statistically independent.  A run uses stream 0 for data batches, stream 1
for weight sampling (and any other strategy randomness) and stream 2 for
parameter initialization.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .math_core import softmax

DATA_STREAM = 0
WEIGHT_STREAM = 1
INIT_STREAM = 2

KINDS = (
    "uniform",
    "normal",
    "dirichlet",
    "bernoulli",
    "constrained_bernoulli",
    "random_normal",
)
# Degenerate distribution: always yields uniform weights and draws nothing.
# Lets EW be expressed as RLW for code-path comparisons.
POINT_MASS = "point_mass"
SUM_NORMALIZED = frozenset({"bernoulli", "constrained_bernoulli"})
SYMMETRIC = ("uniform", "normal", "dirichlet", "bernoulli", "constrained_bernoulli")

SIMPLEX_TOL = 1e-9


def rng_stream(seed: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class WeightDistribution:
    """One of the six weight distributions (or the point mass).

    ``per_run`` applies to ``random_normal`` only: when set, the per-task
    means and variances are drawn once on the first call and then reused.
    """

    kind: str
    per_run: bool = False
    _moments: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS and self.kind != POINT_MASS:
            raise ValueError(f"unknown weight distribution {self.kind!r}")

    @property
    def sum_normalized(self) -> bool:
        return self.kind in SUM_NORMALIZED

    def reset(self) -> None:
        self._moments = None


def _random_normal(dist: WeightDistribution, n_tasks: int, rng: np.random.Generator) -> np.ndarray:
    if dist.per_run and dist._moments is not None and dist._moments.shape[1] == n_tasks:
        mean, var = dist._moments
    else:
        mean = rng.uniform(0.0, 1.0, n_tasks)
        var = rng.uniform(0.0, 1.0, n_tasks)
        if dist.per_run:
            dist._moments = np.stack([mean, var])
    return mean + np.sqrt(var) * rng.standard_normal(n_tasks)


def sample_raw(dist: WeightDistribution, n_tasks: int, rng: np.random.Generator) -> np.ndarray:
    """Draw the un-normalized weights for one iteration."""
    if n_tasks < 1:
        raise ValueError("need at least one task")
    kind = dist.kind
    if kind == "uniform":
        return rng.uniform(0.0, 1.0, n_tasks)
    if kind == "normal":
        return rng.standard_normal(n_tasks)
    if kind == "dirichlet":
        return rng.dirichlet(np.ones(n_tasks))
    if kind == "bernoulli":
        while True:
            raw = rng.integers(0, 2, n_tasks).astype(np.float64)
            if raw.any():
                return raw
    if kind == "constrained_bernoulli":
        raw = np.zeros(n_tasks)
        raw[rng.integers(n_tasks)] = 1.0
        return raw
    if kind == "random_normal":
        return _random_normal(dist, n_tasks, rng)
    return np.zeros(n_tasks)  # point mass


def normalize(raw, kind: str) -> np.ndarray:
    """Map raw weights onto the simplex: sum rule for Bernoulli kinds, softmax otherwise."""
    raw = np.asarray(raw, dtype=np.float64)
    if kind in SUM_NORMALIZED:
        total = raw.sum()
        if total <= 0.0:
            raise ZeroDivisionError("sum-normalization of weights summing to zero")
        return raw / total
    return softmax(raw)


def sample_weights(dist: WeightDistribution, n_tasks: int, rng: np.random.Generator) -> np.ndarray:
    return normalize(sample_raw(dist, n_tasks, rng), dist.kind)
