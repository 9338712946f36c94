"""Evaluation metric and the statistics behind the verification checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .trainer import RunRecord, TrainConfig, train


class ZeroBaselineError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


class StepSizeError(ValueError):
    pass


# ---------------------------------------------------------------------- delta_p


@dataclass(frozen=True)
class MetricSpec:
    """``tasks[t]`` lists ``(metric name, higher_is_better)`` for task t."""

    tasks: tuple[tuple[tuple[str, bool], ...], ...]

    def __post_init__(self):
        if not self.tasks or any(len(t) == 0 for t in self.tasks):
            raise ValueError("every task needs at least one metric")

    @classmethod
    def uniform(cls, n_tasks: int, name: str = "loss", higher_is_better: bool = False) -> "MetricSpec":
        return cls(tuple(((name, higher_is_better),) for _ in range(n_tasks)))


def delta_p(method: Sequence[Sequence[float]], baseline: Sequence[Sequence[float]], spec: MetricSpec) -> float:
    """Mean relative improvement over the baseline, in percent.

    Improvements count as positive whichever direction a metric prefers.
    """
    if len(method) != len(spec.tasks) or len(baseline) != len(spec.tasks):
        raise ValueError("results must have one entry per task")
    total = 0.0
    for m_t, b_t, s_t in zip(method, baseline, spec.tasks):
        if len(m_t) != len(s_t) or len(b_t) != len(s_t):
            raise ValueError("results must have one value per metric")
        acc = 0.0
        for m, b, (name, higher) in zip(m_t, b_t, s_t):
            if b == 0:
                raise ZeroBaselineError(f"baseline value of metric {name!r} is zero")
            sign = 1.0 if higher else -1.0
            acc += sign * (m - b) / b
        total += acc / len(s_t)
    return 100.0 * total / len(spec.tasks)


# --------------------------------------------------------------------- kappa


def estimate_kappa(problem, theta_star, batch_size: int, n_draws: int, rng: np.random.Generator) -> tuple[float, float]:
    """Monte-Carlo estimate of ``sum_t E_batch ||grad l_t(batch; theta*)||^2``.

    Returns ``(estimate, standard error)``.
    """
    from .problems import Params

    params = Params(np.asarray(theta_star, dtype=np.float64))
    totals = np.empty(n_draws)
    for i in range(n_draws):
        _, grads, _ = problem.loss_and_grads(params, problem.sample_batch(batch_size, rng))
        totals[i] = float(np.einsum("ij,ij->", grads, grads))
    return float(totals.mean()), float(totals.std(ddof=1) / math.sqrt(n_draws))


def quadratic_kappa(family, theta_star, batch_size: int) -> float:
    """Exact ``kappa`` for a quadratic family under i.i.d. batches:
    ``sum_t c_t^2 (||theta* - abar_t||^2 + s_t^2 / B)`` with ``s_t^2`` the
    mean squared spread of dataset t around its mean."""
    abar = family.empirical_means
    spread = ((family.data - abar[:, None, :]) ** 2).sum(axis=2).mean(axis=1)
    bias = ((np.asarray(theta_star) - abar) ** 2).sum(axis=1)
    return float((family.curvatures ** 2 * (bias + spread / batch_size)).sum())


# ------------------------------------------------------------- plateau bound


def _seed_matrix(runs: Sequence[RunRecord], include_initial: bool = True) -> tuple[np.ndarray, np.ndarray]:
    if not runs:
        raise InsufficientDataError("no runs given")
    ks = runs[0].dist_sq_array(include_initial)[0]
    rows = []
    for r in runs:
        k, d = r.dist_sq_array(include_initial)
        if not np.array_equal(k, ks):
            raise ValueError("runs were logged at different iterations")
        rows.append(d)
    return ks, np.asarray(rows)


@dataclass
class Theorem1Report:
    iters: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    bound: np.ndarray
    kappa: float
    plateau: float
    plateau_bound: float
    max_violation_ratio: float
    max_excess_in_se: float

    def passed(self, se_margin: float = 3.0, plateau_slack: float = 1.1) -> bool:
        return self.max_excess_in_se <= se_margin and self.plateau <= self.plateau_bound * plateau_slack


def theorem1_check(runs: Sequence[RunRecord], strong_convexity: float, eta: float, kappa: float,
                   tail_fraction: float = 0.1) -> Theorem1Report:
    """Compare the seed-mean ``||theta_k - theta*||^2`` with
    ``(1 - 2 eta c)^k ||theta_0 - theta*||^2 + eta kappa / (2c)`` at every
    logged k (k = 0 included).

    ``max_excess_in_se`` is the largest ``(mean - bound) / stderr`` over
    k > 0; the plateau is the seed mean averaged over the last
    ``tail_fraction`` of logged points.
    """
    c = strong_convexity
    if eta <= 0 or eta > 1.0 / (2.0 * c):
        raise StepSizeError(f"step size {eta} must lie in (0, 1/(2c)] = (0, {1.0 / (2.0 * c)}]")
    ks, mat = _seed_matrix(runs)
    mean = mat.mean(axis=0)
    n = mat.shape[0]
    stderr = mat.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    plateau_bound = eta * kappa / (2.0 * c)
    bound = (1.0 - 2.0 * eta * c) ** ks * mean[0] + plateau_bound
    ratio = mean / bound
    excess = mean[1:] - bound[1:]
    se = stderr[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, excess / se, np.where(excess > 0, np.inf, -np.inf))
    tail = max(1, int(round(tail_fraction * (len(ks) - 1))))
    return Theorem1Report(ks, mean, stderr, bound, float(kappa), float(mean[-tail:].mean()),
                          float(plateau_bound), float(ratio.max()),
                          float(z.max()) if z.size else -math.inf)


# ---------------------------------------------------------------------- rate


def rate_fit(runs: RunRecord | Sequence[RunRecord], min_points: int = 10) -> float:
    """Least-squares slope of log(seed-mean squared distance) against log k
    over the last decade of logged iterations."""
    if isinstance(runs, RunRecord):
        runs = [runs]
    ks, mat = _seed_matrix(runs, include_initial=False)
    if len(ks) == 0:
        raise InsufficientDataError("no logged iterations")
    mean = mat.mean(axis=0)
    sel = (ks >= ks[-1] / 10.0) & (mean > 0)
    if np.count_nonzero(sel) < min_points:
        raise InsufficientDataError(f"need at least {min_points} logged points in the last decade, got {np.count_nonzero(sel)}")
    x = np.log(ks[sel].astype(np.float64))
    y = np.log(mean[sel])
    xc = x - x.mean()
    return float(xc @ (y - y.mean()) / (xc @ xc))


# -------------------------------------------------------------------- escape


@dataclass
class EscapeResult:
    fraction: float
    escaped: np.ndarray  # bool per seed
    seeds: tuple[int, ...]

    @property
    def stderr(self) -> float:
        n = len(self.seeds)
        return math.sqrt(self.fraction * (1 - self.fraction) / n) if n else math.nan


def escape_frequency(problem, config: TrainConfig, seeds: Sequence[int]) -> EscapeResult:
    """Fraction of seeds whose final iterate lies in the flat minimum's basin.

    Basins are split at the saddle between the two minima.  The problem's
    ``init_center``/``init_radius`` define the starting ball.
    """
    escaped = np.empty(len(seeds), dtype=bool)
    for i, seed in enumerate(seeds):
        rec = train(problem, replace(config, seed=int(seed)))
        escaped[i] = problem.in_flat_basin(float(rec.final_theta[0]))
    return EscapeResult(float(escaped.mean()) if len(seeds) else math.nan, escaped, tuple(int(s) for s in seeds))
