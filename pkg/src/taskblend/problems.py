"""Synthetic multi-task problems with exact gradients.

All problems share a small protocol used by the trainer:

* ``n_tasks``, ``dim`` (size of the shared parameter vector)
* ``init_params(rng) -> Params``
* ``sample_batch(batch_size, rng) -> Batch`` and ``full_batch()``
* ``loss_and_grads(params, batch) -> (losses, shared_grads, head_grads)``
* ``optimum(mu)`` (``None`` when no closed form exists)
* ``datasets()`` / ``with_datasets(...)`` for CSV round trips

Problems are immutable after construction; evaluation is pure.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from . import kernels


@dataclass
class Params:
    theta: np.ndarray
    heads: list[np.ndarray] = field(default_factory=list)

    def copy(self) -> "Params":
        return Params(self.theta.copy(), [h.copy() for h in self.heads])


@dataclass(frozen=True)
class Batch:
    indices: np.ndarray  # (T, B), row t indexes task t's dataset

    @property
    def size(self) -> int:
        return self.indices.shape[1]


class MinimumVerificationError(RuntimeError):
    pass


def _draw_indices(n_tasks: int, n: int, batch_size: int, rng: np.random.Generator) -> Batch:
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    return Batch(rng.integers(0, n, size=(n_tasks, batch_size)))


def _full_indices(n_tasks: int, n: int) -> Batch:
    return Batch(np.tile(np.arange(n), (n_tasks, 1)))


# ------------------------------------------------------------------- quadratic


@dataclass(frozen=True, eq=False)
class QuadraticTaskFamily:
    """Task t: ``l_t(D; theta) = c_t/2 * mean_{x in D} ||theta - x||^2``.

    ``data`` has shape (T, n, d); samples of task t are drawn from
    ``N(a_t, sigma_data^2 I)``.  Both the strong-convexity modulus and the
    gradient Lipschitz constant of task t equal ``c_t``.
    """

    centers: np.ndarray
    curvatures: np.ndarray
    data: np.ndarray
    sigma_data: float = 1.0
    theta0: np.ndarray | None = None

    @classmethod
    def generate(cls, n_tasks: int, dim: int, n: int, *, sigma_data: float = 1.0,
                 center_scale: float = 1.0, curvatures=None, seed: int = 0,
                 theta0=None) -> "QuadraticTaskFamily":
        rng = np.random.default_rng(seed)
        centers = center_scale * rng.standard_normal((n_tasks, dim))
        if curvatures is None:
            curvatures = np.ones(n_tasks)
        curvatures = np.asarray(curvatures, dtype=np.float64)
        if curvatures.shape != (n_tasks,) or np.any(curvatures <= 0):
            raise ValueError("need one positive curvature per task")
        data = centers[:, None, :] + sigma_data * rng.standard_normal((n_tasks, n, dim))
        theta0 = np.zeros(dim) if theta0 is None else np.asarray(theta0, dtype=np.float64)
        return cls(centers, curvatures, np.ascontiguousarray(data), float(sigma_data), theta0)

    @property
    def n_tasks(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    @property
    def n(self) -> int:
        return self.data.shape[1]

    @property
    def empirical_means(self) -> np.ndarray:
        return self.data.mean(axis=1)

    @property
    def strong_convexity(self) -> float:
        return float(self.curvatures.min())

    @property
    def lipschitz(self) -> np.ndarray:
        return self.curvatures.copy()

    def init_params(self, rng: np.random.Generator | None = None) -> Params:
        return Params(np.array(self.theta0 if self.theta0 is not None else np.zeros(self.dim), dtype=np.float64))

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> Batch:
        return _draw_indices(self.n_tasks, self.n, batch_size, rng)

    def full_batch(self) -> Batch:
        return _full_indices(self.n_tasks, self.n)

    def loss_and_grads(self, params: Params, batch: Batch):
        losses, grads = kernels.quad_batch(self.data, batch.indices, params.theta, self.curvatures)
        return losses, grads, []

    def optimum(self, mu) -> np.ndarray:
        """Minimizer of ``sum_t mu_t l_t(D_t; .)`` on the sampled datasets."""
        w = np.asarray(mu, dtype=np.float64) * self.curvatures
        return (w @ self.empirical_means) / w.sum()

    def datasets(self) -> list[np.ndarray]:
        return [self.data[t] for t in range(self.n_tasks)]

    def with_datasets(self, datasets) -> "QuadraticTaskFamily":
        return replace(self, data=np.ascontiguousarray(np.stack([np.asarray(d, dtype=np.float64) for d in datasets])))


# ---------------------------------------------------------------------- ToyMLP


def _act(z):
    return np.tanh(z)


def _act_grad_from_output(a):
    return 1.0 - a * a


@dataclass(frozen=True, eq=False)
class ToyMLPProblem:
    """One-hidden-layer tanh trunk shared by all tasks, one linear head per task.

    Task t predicts ``V_t tanh(W x + b) + c_t`` and is scored by
    ``mean_i 1/2 ||prediction_i - y_i||^2``.  Targets come from a hidden
    teacher network of the same shape plus Gaussian noise.  The shared
    parameter vector is ``concat(W.ravel(), b)``; head t is
    ``concat(V_t.ravel(), c_t)``.
    """

    inputs: np.ndarray   # (T, n, d_in)
    targets: np.ndarray  # (T, n, d_out)
    hidden: int

    @classmethod
    def generate(cls, n_tasks: int = 3, d_in: int = 4, hidden: int = 8, d_out: int = 1,
                 n: int = 256, *, noise: float = 0.1, teacher_hidden: int | None = None,
                 seed: int = 0) -> "ToyMLPProblem":
        rng = np.random.default_rng(seed)
        th = teacher_hidden or hidden
        w = rng.standard_normal((th, d_in)) / math.sqrt(d_in)
        b = 0.5 * rng.standard_normal(th)
        x = rng.standard_normal((n_tasks, n, d_in))
        y = np.empty((n_tasks, n, d_out))
        for t in range(n_tasks):
            v = rng.standard_normal((d_out, th)) / math.sqrt(th)
            c = 0.5 * rng.standard_normal(d_out)
            y[t] = np.tanh(x[t] @ w.T + b) @ v.T + c + noise * rng.standard_normal((n, d_out))
        return cls(x, y, hidden)

    @property
    def n_tasks(self) -> int:
        return self.inputs.shape[0]

    @property
    def n(self) -> int:
        return self.inputs.shape[1]

    @property
    def d_in(self) -> int:
        return self.inputs.shape[2]

    @property
    def d_out(self) -> int:
        return self.targets.shape[2]

    @property
    def dim(self) -> int:
        return self.hidden * (self.d_in + 1)

    @property
    def head_dim(self) -> int:
        return self.d_out * (self.hidden + 1)

    def unpack_shared(self, theta):
        h, d = self.hidden, self.d_in
        return theta[: h * d].reshape(h, d), theta[h * d:]

    def unpack_head(self, psi):
        h, o = self.hidden, self.d_out
        return psi[: o * h].reshape(o, h), psi[o * h:]

    def init_params(self, rng: np.random.Generator) -> Params:
        w = rng.standard_normal((self.hidden, self.d_in)) / math.sqrt(self.d_in)
        theta = np.concatenate([w.ravel(), np.zeros(self.hidden)])
        heads = []
        for _ in range(self.n_tasks):
            v = rng.standard_normal((self.d_out, self.hidden)) / math.sqrt(self.hidden)
            heads.append(np.concatenate([v.ravel(), np.zeros(self.d_out)]))
        return Params(theta, heads)

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> Batch:
        return _draw_indices(self.n_tasks, self.n, batch_size, rng)

    def full_batch(self) -> Batch:
        return _full_indices(self.n_tasks, self.n)

    def loss_and_grads(self, params: Params, batch: Batch):
        w, b = self.unpack_shared(params.theta)
        losses = np.empty(self.n_tasks)
        shared = np.empty((self.n_tasks, self.dim))
        heads = []
        for t in range(self.n_tasks):
            idx = batch.indices[t]
            x = self.inputs[t, idx]
            y = self.targets[t, idx]
            v, c = self.unpack_head(params.heads[t])
            a = _act(x @ w.T + b)
            resid = a @ v.T + c - y
            m = x.shape[0]
            losses[t] = 0.5 * float(np.einsum("ij,ij->", resid, resid)) / m
            d_out = resid / m
            grad_v = d_out.T @ a
            grad_c = d_out.sum(axis=0)
            d_z = (d_out @ v) * _act_grad_from_output(a)
            shared[t, : w.size] = (d_z.T @ x).ravel()
            shared[t, w.size:] = d_z.sum(axis=0)
            heads.append(np.concatenate([grad_v.ravel(), grad_c]))
        return losses, shared, heads

    def optimum(self, mu):
        return None

    def datasets(self) -> list[np.ndarray]:
        return [np.hstack([self.inputs[t], self.targets[t]]) for t in range(self.n_tasks)]

    def with_datasets(self, datasets) -> "ToyMLPProblem":
        arr = np.stack([np.asarray(d, dtype=np.float64) for d in datasets])
        return replace(self, inputs=np.ascontiguousarray(arr[:, :, : self.d_in]),
                       targets=np.ascontiguousarray(arr[:, :, self.d_in:]))


# ------------------------------------------------------------------- landscape


@dataclass(frozen=True)
class Minimum:
    location: float
    curvature: float
    loss: float


@dataclass(frozen=True, eq=False)
class LandscapeProblem:
    """One-dimensional two-well landscape split across tasks.

    Mean loss::

        L(x) = q x^2 / 2 - A_s exp(-(x - m_s)^2 / (2 w_s^2))
                         - A_f exp(-(x - m_f)^2 / (2 w_f^2))

    with a narrow well (sharp local minimum) near ``m_s`` and a wide well
    (flat global minimum) near ``m_f``.  Task t adds a linear tilt ``b_t x``
    (tilts sum to zero, so task minima disagree) plus ``zbar x`` where
    ``zbar`` is the batch mean of the task's zero-mean scalar data.  Under
    uniform task weights and the full dataset the objective is exactly L.
    """

    noise: np.ndarray  # (T, n) zero-mean per task
    tilts: np.ndarray  # (T,)
    confinement: float = 0.1
    sharp_center: float = 0.0
    sharp_width: float = 0.2
    sharp_depth: float = 1.0
    flat_center: float = 3.0
    flat_width: float = 1.0
    flat_depth: float = 2.0
    init_center: float | None = None
    init_radius: float = 0.05

    @classmethod
    def generate(cls, n_tasks: int = 2, n: int = 512, *, tilt: float = 6.0,
                 sigma_data: float = 13.0, seed: int = 0, **shape) -> "LandscapeProblem":
        rng = np.random.default_rng(seed)
        z = sigma_data * rng.standard_normal((n_tasks, n))
        z -= z.mean(axis=1, keepdims=True)
        tilts = tilt * np.linspace(-1.0, 1.0, n_tasks) if n_tasks > 1 else np.zeros(1)
        problem = cls(np.ascontiguousarray(z), tilts, **shape)
        problem.landscape_minima()  # fail fast on a bad construction
        return problem

    @property
    def n_tasks(self) -> int:
        return self.noise.shape[0]

    @property
    def n(self) -> int:
        return self.noise.shape[1]

    @property
    def dim(self) -> int:
        return 1

    def _wells(self, x):
        es = self.sharp_depth * np.exp(-((x - self.sharp_center) ** 2) / (2 * self.sharp_width ** 2))
        ef = self.flat_depth * np.exp(-((x - self.flat_center) ** 2) / (2 * self.flat_width ** 2))
        return es, ef

    def mean_loss(self, x):
        es, ef = self._wells(x)
        return 0.5 * self.confinement * x * x - es - ef

    def mean_grad(self, x):
        es, ef = self._wells(x)
        return (self.confinement * x + es * (x - self.sharp_center) / self.sharp_width ** 2
                + ef * (x - self.flat_center) / self.flat_width ** 2)

    def mean_curvature(self, x):
        es, ef = self._wells(x)
        ws2, wf2 = self.sharp_width ** 2, self.flat_width ** 2
        return (self.confinement + es * (1.0 - (x - self.sharp_center) ** 2 / ws2) / ws2
                + ef * (1.0 - (x - self.flat_center) ** 2 / wf2) / wf2)

    def _newton(self, x0: float, target=None) -> float:
        x = x0
        for _ in range(200):
            h = self.mean_curvature(x)
            step = self.mean_grad(x) / h if h != 0 else 0.0
            # damp steps that would leave the well
            step = max(-0.1, min(0.1, step))
            x -= step
            if abs(self.mean_grad(x)) < 1e-13:
                break
        return float(x)

    def landscape_minima(self) -> dict[str, Minimum]:
        """Locate and verify both minima (computed once, then cached).

        Raises :class:`MinimumVerificationError` unless both points have
        ``|L'| <= 1e-8`` and positive curvature, the sharp curvature is at
        least ten times the flat one and the flat minimum has lower loss.
        """
        return dict(self._minima)

    @cached_property
    def _minima(self) -> dict[str, Minimum]:
        out = {}
        for name, guess in (("sharp", self.sharp_center), ("flat", self.flat_center)):
            x = self._newton(guess)
            out[name] = Minimum(x, float(self.mean_curvature(x)), float(self.mean_loss(x)))
        sharp, flat = out["sharp"], out["flat"]
        for name, m in out.items():
            if abs(self.mean_grad(m.location)) > 1e-8 or m.curvature <= 0:
                raise MinimumVerificationError(f"{name} minimum not verified at x={m.location}")
        if sharp.curvature < 10 * flat.curvature:
            raise MinimumVerificationError("sharp/flat curvature ratio below 10")
        if flat.loss >= sharp.loss:
            raise MinimumVerificationError("flat minimum is not the lower one")
        if abs(sharp.location - flat.location) < 1e-6:
            raise MinimumVerificationError("both searches converged to the same minimum")
        return out

    @cached_property
    def saddle_location(self) -> float:
        """Local maximum of L between the two minima (the basin boundary)."""
        m = self._minima
        lo, hi = sorted((m["sharp"].location, m["flat"].location))
        xs = np.linspace(lo, hi, 4001)
        x = float(xs[np.argmax(self.mean_loss(xs))])
        for _ in range(100):
            h = self.mean_curvature(x)
            if h == 0:
                break
            x -= self.mean_grad(x) / h
            if abs(self.mean_grad(x)) < 1e-13:
                break
        return x

    def saddle(self) -> float:
        return self.saddle_location

    def in_flat_basin(self, x: float) -> bool:
        m = self._minima
        s = self.saddle_location
        return (x > s) == (m["flat"].location > s)

    def init_params(self, rng: np.random.Generator | None = None) -> Params:
        center = self._minima["sharp"].location if self.init_center is None else self.init_center
        if self.init_radius > 0 and rng is not None:
            center = center + rng.uniform(-self.init_radius, self.init_radius)
        return Params(np.array([float(center)]))

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> Batch:
        return _draw_indices(self.n_tasks, self.n, batch_size, rng)

    def full_batch(self) -> Batch:
        return _full_indices(self.n_tasks, self.n)

    def loss_and_grads(self, params: Params, batch: Batch):
        x = float(params.theta[0])
        zbar = self.noise[np.arange(self.n_tasks)[:, None], batch.indices].mean(axis=1)
        base = self.mean_loss(x)
        slope = self.tilts + zbar
        losses = base + slope * x
        grads = (self.mean_grad(x) + slope)[:, None]
        return losses, grads, []

    def optimum(self, mu):
        return None

    def datasets(self) -> list[np.ndarray]:
        return [self.noise[t][:, None] for t in range(self.n_tasks)]

    def with_datasets(self, datasets) -> "LandscapeProblem":
        return replace(self, noise=np.ascontiguousarray(np.stack([np.asarray(d, dtype=np.float64)[:, 0] for d in datasets])))


# ------------------------------------------------------------------------- CSV


def dump_datasets_csv(problem, path) -> None:
    """Write every task's dataset as rows ``task, index, v0, v1, ...``."""
    sets = problem.datasets()
    width = sets[0].shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "index"] + [f"v{j}" for j in range(width)])
        for t, rows in enumerate(sets):
            for i, row in enumerate(rows):
                writer.writerow([t, i] + [repr(float(v)) for v in row])


def load_datasets_csv(path) -> list[np.ndarray]:
    rows: dict[int, list[tuple[int, list[float]]]] = {}
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for rec in reader:
            rows.setdefault(int(rec[0]), []).append((int(rec[1]), [float(v) for v in rec[2:]]))
    return [np.array([v for _, v in sorted(rows[t])]) for t in sorted(rows)]


# ------------------------------------------------------------------ FD oracle


def finite_difference_check(problem, params: Params, batch: Batch, step: float = 1e-5):
    """Worst relative error between analytic and central-difference gradients.

    Relative error of one coordinate is ``|fd - an| / (|fd| + |an| + 1e-8)``
    (the small floor keeps exactly-zero coordinates well defined).  Covers
    shared and head parameters of every task.
    """
    losses, shared, heads = problem.loss_and_grads(params, batch)
    worst = 0.0

    def rel(fd, an):
        return abs(fd - an) / (abs(fd) + abs(an) + 1e-8)

    for j in range(params.theta.size):
        p_plus, p_minus = params.copy(), params.copy()
        p_plus.theta[j] += step
        p_minus.theta[j] -= step
        fd = (problem.loss_and_grads(p_plus, batch)[0] - problem.loss_and_grads(p_minus, batch)[0]) / (2 * step)
        for t in range(problem.n_tasks):
            worst = max(worst, rel(fd[t], shared[t, j]))
    for t, head in enumerate(heads):
        for j in range(head.size):
            p_plus, p_minus = params.copy(), params.copy()
            p_plus.heads[t][j] += step
            p_minus.heads[t][j] -= step
            fd = (problem.loss_and_grads(p_plus, batch)[0][t] - problem.loss_and_grads(p_minus, batch)[0][t]) / (2 * step)
            worst = max(worst, rel(fd, head[j]))
    return worst
