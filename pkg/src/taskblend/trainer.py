"""Doubly stochastic training loop.

Each iteration samples one mini-batch per task (data stream), asks the
strategy for an aggregated shared gradient (weights stream), updates the
shared parameters with it and every task head with its own gradient.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .sampling import DATA_STREAM, INIT_STREAM, WEIGHT_STREAM, rng_stream
from .strategies import AggregationContext, Strategy, make_strategy, param_sign

DIVERGENCE_THRESHOLD = 1e12
OPTIMIZER_KINDS = ("sgd_fixed", "sgd_decreasing", "adam")


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int, losses):
        self.iteration = iteration
        self.losses = np.asarray(losses, dtype=np.float64)
        super().__init__(f"training diverged at iteration {iteration}: losses {self.losses.tolist()}")


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "sgd_fixed"
    lr: float = 0.01
    alpha_step: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.lr <= 0 or self.alpha_step <= 0:
            raise ValueError("learning rates must be positive")


def lr_schedule(spec: OptimizerSpec, k: int) -> float:
    """Step size at iteration ``k`` (1-based): ``alpha_step / k`` for the
    decreasing schedule, ``lr`` otherwise."""
    if spec.kind == "sgd_decreasing":
        if k < 1:
            raise ValueError("decreasing schedule is defined for k >= 1")
        return spec.alpha_step / k
    return spec.lr


class _Adam:
    def __init__(self, spec: OptimizerSpec, size: int):
        self.spec = spec
        self.m = np.zeros(size)
        self.v = np.zeros(size)

    def step(self, x, g, k):
        s = self.spec
        self.m = s.beta1 * self.m + (1 - s.beta1) * g
        self.v = s.beta2 * self.v + (1 - s.beta2) * g * g
        m_hat = self.m / (1 - s.beta1 ** k)
        v_hat = self.v / (1 - s.beta2 ** k)
        return x - s.lr * m_hat / (np.sqrt(v_hat) + s.eps)


@dataclass
class TrainConfig:
    iterations: int
    batch_size: int
    seed: int = 0
    strategy: str = "ew"
    strategy_params: dict[str, Any] = field(default_factory=dict)
    distribution: str | None = None
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    log_stride: int = 1
    reference_weights: tuple[float, ...] | None = None  # mu for theta*; uniform if None

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.log_stride < 1:
            raise ValueError("log_stride must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class RunRecord:
    """Per-iteration log of one run.  Row ``i`` describes iteration
    ``iters[i]``: batch losses and weights used at that step, the norm of the
    aggregated gradient and the squared distance to the optimum after the
    update."""

    n_tasks: int
    config: dict[str, Any]
    iters: list[int] = field(default_factory=list)
    losses: list[np.ndarray] = field(default_factory=list)
    weights: list[np.ndarray] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    dist_sq: list[float] = field(default_factory=list)
    initial_losses: np.ndarray | None = None
    initial_dist_sq: float = math.nan
    final_losses: np.ndarray | None = None
    final_theta: np.ndarray | None = None
    wall_time: float = 0.0
    diagnostics: dict[str, float] = field(default_factory=dict)

    def dist_sq_array(self, include_initial: bool = True) -> tuple[np.ndarray, np.ndarray]:
        ks = np.asarray(self.iters, dtype=np.int64)
        ds = np.asarray(self.dist_sq, dtype=np.float64)
        if include_initial:
            ks = np.concatenate([[0], ks])
            ds = np.concatenate([[self.initial_dist_sq], ds])
        return ks, ds

    def csv_header(self) -> list[str]:
        t = range(1, self.n_tasks + 1)
        return ["iter"] + [f"loss_{i}" for i in t] + [f"weight_{i}" for i in t] + ["grad_norm", "dist_sq_opt"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.csv_header())
        for k, loss, w, gn, ds in zip(self.iters, self.losses, self.weights, self.grad_norms, self.dist_sq):
            writer.writerow([k] + [_fmt(v) for v in loss] + [_fmt(v) for v in w] + [_fmt(gn), _fmt(ds)])
        return buf.getvalue()

    def summary(self) -> dict[str, Any]:
        return {
            "config": self.config,
            "final_losses": None if self.final_losses is None else [float(v) for v in self.final_losses],
            "final_mean_loss": None if self.final_losses is None else float(np.mean(self.final_losses)),
            "initial_dist_sq": _json_float(self.initial_dist_sq),
            "final_dist_sq": _json_float(self.dist_sq[-1] if self.dist_sq else self.initial_dist_sq),
            "wall_time": self.wall_time,
            "diagnostics": {k: _json_float(v) for k, v in self.diagnostics.items()},
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _json_float(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _check(losses, iteration: int) -> None:
    if not np.all(np.isfinite(losses)) or np.any(np.abs(losses) > DIVERGENCE_THRESHOLD):
        raise DivergenceError(iteration, losses)


def _reference(problem, config: TrainConfig) -> np.ndarray:
    if config.reference_weights is None:
        return np.full(problem.n_tasks, 1.0 / problem.n_tasks)
    mu = np.asarray(config.reference_weights, dtype=np.float64)
    if mu.shape != (problem.n_tasks,):
        raise ValueError("reference_weights must have one entry per task")
    return mu


def build_strategy(problem, config: TrainConfig) -> Strategy:
    return make_strategy(config.strategy, problem.n_tasks, config.strategy_params, config.distribution)


def train(problem, config: TrainConfig, strategy: Strategy | None = None) -> RunRecord:
    """Run the training loop; deterministic given ``config.seed``."""
    start = time.perf_counter()
    data_rng = rng_stream(config.seed, DATA_STREAM)
    weight_rng = rng_stream(config.seed, WEIGHT_STREAM)
    params = problem.init_params(rng_stream(config.seed, INIT_STREAM))
    strategy = strategy or build_strategy(problem, config)
    theta_star = problem.optimum(_reference(problem, config))
    opt = config.optimizer
    adam = None
    if opt.kind == "adam":
        adam = [_Adam(opt, params.theta.size)] + [_Adam(opt, h.size) for h in params.heads]

    record = RunRecord(problem.n_tasks, config.to_dict())
    full = problem.full_batch()
    record.initial_losses = problem.loss_and_grads(params, full)[0]
    if theta_star is not None:
        diff = params.theta - theta_star
        record.initial_dist_sq = float(diff @ diff)

    theta = params.theta
    heads = params.heads
    stride = config.log_stride
    diag_sums: dict[str, float] = {}
    for k in range(1, config.iterations + 1):
        batch = problem.sample_batch(config.batch_size, data_rng)
        losses, grads, head_grads = problem.loss_and_grads(params, batch)
        _check(losses, k)
        sign = param_sign(theta) if strategy.needs_sign else None
        result = strategy.step(AggregationContext(losses, grads, sign, k - 1), weight_rng)
        g = result.shared_gradient
        for key, val in result.diagnostics.items():
            diag_sums[key] = diag_sums.get(key, 0.0) + val
        if adam is None:
            eta = lr_schedule(opt, k)
            theta = theta - eta * g
            heads = [h - eta * hg for h, hg in zip(heads, head_grads)]
        else:
            theta = adam[0].step(theta, g, k)
            heads = [a.step(h, hg, k) for a, h, hg in zip(adam[1:], heads, head_grads)]
        if not np.all(np.isfinite(theta)):
            raise DivergenceError(k, losses)
        params.theta, params.heads = theta, heads
        if k % stride == 0:
            record.iters.append(k)
            record.losses.append(losses)
            w = result.effective_weights
            record.weights.append(np.full(problem.n_tasks, np.nan) if w is None else np.asarray(w, dtype=np.float64))
            record.grad_norms.append(float(math.sqrt(g @ g)))
            if theta_star is None:
                record.dist_sq.append(math.nan)
            else:
                diff = theta - theta_star
                record.dist_sq.append(float(diff @ diff))

    final = problem.loss_and_grads(params, full)[0]
    _check(final, config.iterations)
    record.final_losses = final
    record.final_theta = theta.copy()
    if config.iterations:
        record.diagnostics = {f"mean_{k}": v / config.iterations for k, v in diag_sums.items()}
    record.wall_time = time.perf_counter() - start
    return record


# ------------------------------------------------------------------- noise


def gradient_samples(problem, strategy: Strategy, params, batch_size: int, n_samples: int,
                     data_rng: np.random.Generator, weight_rng: np.random.Generator | None = None) -> np.ndarray:
    """``n_samples`` stochastic aggregated shared gradients at fixed parameters.

    A batch size of at least the dataset size uses the full dataset, so the
    only randomness left is the strategy's own.
    """
    weight_rng = data_rng if weight_rng is None else weight_rng
    use_full = batch_size >= problem.n
    full = problem.full_batch() if use_full else None
    sign = param_sign(params.theta) if strategy.needs_sign else None
    out = np.empty((n_samples, params.theta.size))
    for i in range(n_samples):
        batch = full if use_full else problem.sample_batch(batch_size, data_rng)
        losses, grads, _ = problem.loss_and_grads(params, batch)
        out[i] = strategy.step(AggregationContext(losses, grads, sign, i), weight_rng).shared_gradient
    return out


def full_gradient(problem, params, mu=None) -> np.ndarray:
    """``sum_t mu_t grad l_t(D_t)`` on the full datasets (``mu`` uniform by default)."""
    _, grads, _ = problem.loss_and_grads(params, problem.full_batch())
    mu = np.full(problem.n_tasks, 1.0 / problem.n_tasks) if mu is None else np.asarray(mu, dtype=np.float64)
    return mu @ grads


def noise_sample(problem, strategy: Strategy, params, batch_size: int, n_samples: int,
                 data_rng: np.random.Generator, weight_rng: np.random.Generator | None = None,
                 mu=None) -> np.ndarray:
    """Squared norms of ``xi = stochastic aggregated gradient - full mu-weighted gradient``."""
    samples = gradient_samples(problem, strategy, params, batch_size, n_samples, data_rng, weight_rng)
    xi = samples - full_gradient(problem, params, mu)
    return np.einsum("ij,ij->i", xi, xi)
