"""Loss-weighting / gradient-aggregation strategies behind one interface.

Each strategy maps the per-task losses and per-task gradients of the shared
parameters to one aggregated shared gradient, optionally reporting the
effective task weights it used.  The operation functions (``mgda_solve``,
``pcgrad_project`` ...) are usable on their own; :class:`Strategy`
subclasses bundle them with their persistent state for the trainer.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, ClassVar

import numpy as np

from . import kernels
from .math_core import SingularMatrixError, softmax, solve_linear_ridge
from .sampling import WeightDistribution, sample_weights

# named tolerances and defaults
ZERO_NORM = 1e-30
LOSS_FLOOR = 1e-12
GRADNORM_MIN_WEIGHT = 1e-6
GRADNORM_ALPHA = 1.5
INNER_LR = 0.025
LOG_SCALE_CLAMP = 10.0
MGDA_TOL = 1e-6
MGDA_MAX_ITER = 250
GRADVAC_BETA = 0.01

KINDS = (
    "ew", "rlw", "gradnorm", "uw", "mgda", "dwa",
    "pcgrad", "graddrop", "imtl_g", "imtl_l", "imtl", "gradvac",
)
WEIGHT_BASED = frozenset({"ew", "rlw", "dwa", "uw", "gradnorm", "imtl_l", "mgda"})


@dataclass
class AggregationContext:
    losses: np.ndarray
    grads: np.ndarray
    shared_param_sign: np.ndarray | None = None
    iteration: int = 0

    def __post_init__(self):
        self.losses = np.asarray(self.losses, dtype=np.float64)
        self.grads = np.atleast_2d(np.asarray(self.grads, dtype=np.float64))
        if self.grads.shape[0] != self.losses.shape[0]:
            raise ValueError(f"{self.losses.shape[0]} losses but {self.grads.shape[0]} gradient rows")
        if not (np.isfinite(self.losses).all() and np.isfinite(self.grads).all()):
            raise ValueError("losses and gradients must be finite")

    @property
    def n_tasks(self) -> int:
        return self.grads.shape[0]


@dataclass
class AggregationResult:
    """``shared_gradient == aggregate(effective_weights * weight_scale, G)``
    for every strategy that reports weights."""

    shared_gradient: np.ndarray
    effective_weights: np.ndarray | None = None
    weight_scale: float = 1.0
    diagnostics: dict[str, float] = field(default_factory=dict)


def aggregate(weights, grads) -> np.ndarray:
    """Weighted sum of gradient rows."""
    weights = np.asarray(weights, dtype=np.float64)
    grads = np.atleast_2d(grads)
    if weights.shape[0] != grads.shape[0]:
        raise ValueError("weights and gradient rows differ in length")
    return kernels.aggregate(weights, grads)


def _weighted(ctx: AggregationContext, weights: np.ndarray, scale: float = 1.0, **diag) -> AggregationResult:
    return AggregationResult(aggregate(weights * scale, ctx.grads), weights, scale, dict(diag))


def _visit_orders(n_tasks: int, rng: np.random.Generator) -> np.ndarray:
    """One random permutation of the other tasks for every task."""
    orders = np.empty((n_tasks, max(n_tasks - 1, 0)), dtype=np.int64)
    for p in range(n_tasks):
        others = np.array([q for q in range(n_tasks) if q != p], dtype=np.int64)
        orders[p] = rng.permutation(others)
    return orders


# --------------------------------------------------------------------- EW / RLW


def ew_weights(n_tasks: int) -> np.ndarray:
    return np.full(n_tasks, 1.0 / n_tasks)


def rlw_weights(dist: WeightDistribution, n_tasks: int, rng: np.random.Generator) -> np.ndarray:
    return sample_weights(dist, n_tasks, rng)


# ------------------------------------------------------------------------- DWA


@dataclass
class DWAState:
    epoch_length: int = 1
    temperature: float = 1.0
    epoch: int = 0
    loss_sum: list[float] | None = None
    loss_count: int = 0
    history: list[list[float]] = field(default_factory=list)  # oldest first, at most 2


def dwa_weights(state: DWAState, n_tasks: int) -> np.ndarray:
    """``T * softmax(l_{k-1} / l_{k-2} / temperature)``; uniform (all ones)
    until two epochs of history exist."""
    if len(state.history) < 2:
        return np.ones(n_tasks)
    prev2 = np.asarray(state.history[-2])
    prev1 = np.asarray(state.history[-1])
    safe = prev2 >= LOSS_FLOOR
    ratio = np.where(safe, prev1 / np.where(safe, prev2, 1.0), 1.0)
    return n_tasks * softmax(ratio / state.temperature)


def dwa_observe(state: DWAState, losses: np.ndarray, iteration: int) -> None:
    epoch = iteration // state.epoch_length
    if epoch != state.epoch and state.loss_count:
        state.history.append(list(np.asarray(state.loss_sum) / state.loss_count))
        del state.history[:-2]
        state.loss_sum, state.loss_count = None, 0
    state.epoch = epoch
    if state.loss_sum is None:
        state.loss_sum = [0.0] * len(losses)
    state.loss_sum = list(np.asarray(state.loss_sum) + losses)
    state.loss_count += 1


# -------------------------------------------------------------------- GradNorm


@dataclass
class GradNormState:
    weights: np.ndarray | None = None
    initial_losses: np.ndarray | None = None
    alpha: float = GRADNORM_ALPHA
    lr: float = INNER_LR


def gradnorm_step(ctx: AggregationContext, state: GradNormState) -> AggregationResult:
    """Aggregate with the current weights, then take one subgradient step on
    ``sum_t |w_t ||g_t|| - gbar * r_t**alpha|`` with the targets held fixed."""
    n = ctx.n_tasks
    if state.weights is None:
        state.weights = np.ones(n)
    if state.initial_losses is None:
        state.initial_losses = np.maximum(ctx.losses, LOSS_FLOOR)
    w = state.weights
    result = _weighted(ctx, w / n)

    norms = np.sqrt(np.einsum("ij,ij->i", ctx.grads, ctx.grads))
    rel = ctx.losses / state.initial_losses
    mean_rel = rel.mean()
    r = rel / mean_rel if mean_rel > 0 else np.ones(n)
    gbar = float(w @ norms) / n
    target = gbar * r ** state.alpha
    subgrad = np.sign(w * norms - target) * norms
    w = np.maximum(w - state.lr * subgrad, GRADNORM_MIN_WEIGHT)
    state.weights = w * (n / w.sum())
    result.diagnostics["gradnorm_objective"] = float(np.abs(result.effective_weights * n * norms - target).sum())
    return result


# ------------------------------------------------------------------ UW, IMTL-L


@dataclass
class LogScaleState:
    log_scale: np.ndarray | None = None
    lr: float = INNER_LR


def _log_scale(state: LogScaleState, n: int) -> np.ndarray:
    if state.log_scale is None:
        state.log_scale = np.zeros(n)
    return state.log_scale


def uw_step(ctx: AggregationContext, state: LogScaleState) -> AggregationResult:
    """Uncertainty weighting: weight ``exp(-s_t)``, objective
    ``sum_t exp(-s_t) l_t + s_t / 2``."""
    s = _log_scale(state, ctx.n_tasks)
    lam = np.exp(-s)
    total = float(lam.sum())
    result = _weighted(ctx, lam / total, total)
    grad_s = -lam * ctx.losses + 0.5
    state.log_scale = np.clip(s - state.lr * grad_s, -LOG_SCALE_CLAMP, LOG_SCALE_CLAMP)
    return result


def imtl_l_step(ctx: AggregationContext, state: LogScaleState) -> AggregationResult:
    """Learned loss scales ``exp(s_t)`` with objective ``sum_t exp(s_t) l_t - s_t``."""
    s = _log_scale(state, ctx.n_tasks)
    lam = np.exp(s)
    result = _weighted(ctx, lam)
    grad_s = lam * ctx.losses - 1.0
    state.log_scale = np.clip(s - state.lr * grad_s, -LOG_SCALE_CLAMP, LOG_SCALE_CLAMP)
    return result


# ------------------------------------------------------------------------ MGDA


def mgda_solve(ctx: AggregationContext, tol: float = MGDA_TOL, max_iter: int = MGDA_MAX_ITER) -> AggregationResult:
    """Min-norm point of the convex hull of the task gradients.

    Solved with away-step Frank-Wolfe on the Gram matrix using exact line
    search; stops when the duality gap drops to ``tol``.
    """
    gram = ctx.grads @ ctx.grads.T
    lam, gap, iters = kernels.mgda_frank_wolfe(gram, max_iter, tol)
    return _weighted(ctx, lam, duality_gap=float(gap), iterations=float(iters))


# ------------------------------------------------------------- PCGrad, GradVac


def _projected_result(ctx: AggregationContext, projected: np.ndarray, coef: np.ndarray) -> AggregationResult:
    n = ctx.n_tasks
    # each projected row is g_p + sum_q coef[p, q] g_q
    weights = (1.0 + coef.sum(axis=0)) / n
    return AggregationResult(projected.mean(axis=0), weights, 1.0, {"projections": float(np.count_nonzero(coef))})


def pcgrad_project(ctx: AggregationContext, rng: np.random.Generator) -> AggregationResult:
    orders = _visit_orders(ctx.n_tasks, rng)
    projected, coef = kernels.pcgrad(ctx.grads, orders)
    return _projected_result(ctx, projected, coef)


@dataclass
class GradVacState:
    beta: float = GRADVAC_BETA
    targets: np.ndarray | None = None


def gradvac_adjust(ctx: AggregationContext, state: GradVacState, rng: np.random.Generator) -> AggregationResult:
    n = ctx.n_tasks
    if state.targets is None:
        state.targets = np.zeros((n, n))
    state.targets = np.ascontiguousarray(state.targets, dtype=np.float64)
    orders = _visit_orders(n, rng)
    adjusted, coef = kernels.gradvac(ctx.grads, orders, state.targets, state.beta)
    return _projected_result(ctx, adjusted, coef)


# -------------------------------------------------------------------- GradDrop


def param_sign(theta) -> np.ndarray:
    """sgn(theta) with sgn(0) = +1."""
    return np.where(np.asarray(theta) < 0.0, -1.0, 1.0)


def graddrop_mask(ctx: AggregationContext, rng: np.random.Generator, leak=None) -> AggregationResult:
    """Sign-purity dropout.  Returns the sum over tasks of the kept entries;
    no scalar weights are reported."""
    n, d = ctx.grads.shape
    sign = ctx.shared_param_sign if ctx.shared_param_sign is not None else np.ones(d)
    leak = np.zeros(n) if leak is None else np.broadcast_to(np.asarray(leak, dtype=np.float64), (n,))
    e = rng.uniform(0.0, 1.0, d)
    return AggregationResult(kernels.graddrop(ctx.grads, sign, e, leak))


# --------------------------------------------------------------------- IMTL-G


def imtl_g_solve(ctx: AggregationContext) -> AggregationResult:
    """Weights whose aggregate has equal projection on every unit task gradient."""
    g = ctx.grads
    n = ctx.n_tasks
    if n == 1:
        return _weighted(ctx, np.ones(1))
    norms = np.sqrt(np.einsum("ij,ij->i", g, g))
    if np.any(norms < ZERO_NORM):
        return _weighted(ctx, ew_weights(n), fallback=1.0)
    u = g / norms[:, None]
    diff_g = g[0] - g[1:]
    diff_u = u[0] - u[1:]
    try:
        sol = solve_linear_ridge(diff_u @ diff_g.T, diff_u @ g[0])
    except SingularMatrixError:
        return _weighted(ctx, ew_weights(n), fallback=1.0)
    alpha = sol.x
    weights = np.concatenate([[1.0 - alpha.sum()], alpha])
    return _weighted(ctx, weights, fallback=float(sol.fallback))


# ==================================================================== wrappers


class Strategy:
    """Base class.  ``step`` is called once per training iteration."""

    kind: ClassVar[str] = ""
    needs_grads: ClassVar[bool] = True
    needs_sign: ClassVar[bool] = False

    def __init__(self, n_tasks: int):
        if n_tasks < 1:
            raise ValueError("need at least one task")
        self.n_tasks = n_tasks

    def step(self, ctx: AggregationContext, rng: np.random.Generator) -> AggregationResult:
        raise NotImplementedError

    def state_dict(self) -> dict[str, Any]:
        return {}

    def load_state_dict(self, state: dict[str, Any]) -> None:
        pass

    def __repr__(self):
        return f"{type(self).__name__}(n_tasks={self.n_tasks})"


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    return obj


def _arrays(d: dict[str, Any], keys) -> dict[str, Any]:
    return {k: (np.asarray(v, dtype=np.float64) if k in keys and v is not None else v) for k, v in d.items()}


class EW(Strategy):
    kind = "ew"
    needs_grads = False

    def step(self, ctx, rng):
        return _weighted(ctx, ew_weights(ctx.n_tasks))


class RLW(Strategy):
    kind = "rlw"
    needs_grads = False

    def __init__(self, n_tasks, distribution: str | WeightDistribution = "normal", per_run: bool = False):
        super().__init__(n_tasks)
        if isinstance(distribution, str):
            distribution = WeightDistribution(distribution, per_run=per_run)
        self.distribution = distribution

    def step(self, ctx, rng):
        return _weighted(ctx, rlw_weights(self.distribution, ctx.n_tasks, rng))

    def state_dict(self):
        moments = self.distribution._moments
        return {"distribution": self.distribution.kind, "moments": None if moments is None else moments.tolist()}

    def load_state_dict(self, state):
        self.distribution = WeightDistribution(state["distribution"], per_run=self.distribution.per_run)
        if state.get("moments") is not None:
            self.distribution._moments = np.asarray(state["moments"])


class DWA(Strategy):
    kind = "dwa"
    needs_grads = False

    def __init__(self, n_tasks, epoch_length: int = 1, temperature: float = 1.0):
        super().__init__(n_tasks)
        if epoch_length < 1 or temperature <= 0:
            raise ValueError("epoch_length must be >= 1 and temperature > 0")
        self.state = DWAState(epoch_length=epoch_length, temperature=temperature)

    def step(self, ctx, rng):
        dwa_observe(self.state, ctx.losses, ctx.iteration)
        w = dwa_weights(self.state, ctx.n_tasks)
        return _weighted(ctx, w / ctx.n_tasks)

    def state_dict(self):
        return _jsonable(asdict(self.state))

    def load_state_dict(self, state):
        self.state = DWAState(**state)


class GradNorm(Strategy):
    kind = "gradnorm"

    def __init__(self, n_tasks, alpha: float = GRADNORM_ALPHA, lr: float = INNER_LR):
        super().__init__(n_tasks)
        self.state = GradNormState(alpha=alpha, lr=lr)

    def step(self, ctx, rng):
        return gradnorm_step(ctx, self.state)

    def state_dict(self):
        return _jsonable(asdict(self.state))

    def load_state_dict(self, state):
        self.state = GradNormState(**_arrays(state, {"weights", "initial_losses"}))


class _LogScaleStrategy(Strategy):
    needs_grads = False

    def __init__(self, n_tasks, lr: float = INNER_LR):
        super().__init__(n_tasks)
        self.state = LogScaleState(lr=lr)

    def state_dict(self):
        return _jsonable(asdict(self.state))

    def load_state_dict(self, state):
        self.state = LogScaleState(**_arrays(state, {"log_scale"}))


class UW(_LogScaleStrategy):
    kind = "uw"

    def step(self, ctx, rng):
        return uw_step(ctx, self.state)


class IMTLL(_LogScaleStrategy):
    kind = "imtl_l"

    def step(self, ctx, rng):
        return imtl_l_step(ctx, self.state)


class MGDA(Strategy):
    kind = "mgda"

    def __init__(self, n_tasks, tol: float = MGDA_TOL, max_iter: int = MGDA_MAX_ITER):
        super().__init__(n_tasks)
        self.tol, self.max_iter = tol, max_iter

    def step(self, ctx, rng):
        return mgda_solve(ctx, self.tol, self.max_iter)


class PCGrad(Strategy):
    kind = "pcgrad"

    def step(self, ctx, rng):
        return pcgrad_project(ctx, rng)


class GradVac(Strategy):
    kind = "gradvac"

    def __init__(self, n_tasks, beta: float = GRADVAC_BETA):
        super().__init__(n_tasks)
        if not 0.0 <= beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        self.state = GradVacState(beta=beta)

    def step(self, ctx, rng):
        return gradvac_adjust(ctx, self.state, rng)

    def state_dict(self):
        return _jsonable(asdict(self.state))

    def load_state_dict(self, state):
        self.state = GradVacState(**_arrays(state, {"targets"}))


class GradDrop(Strategy):
    kind = "graddrop"
    needs_sign = True

    def __init__(self, n_tasks, leak: float | list[float] = 0.0):
        super().__init__(n_tasks)
        leak_arr = np.broadcast_to(np.asarray(leak, dtype=np.float64), (n_tasks,)).copy()
        if np.any(leak_arr < 0) or np.any(leak_arr > 1):
            raise ValueError("leak values must lie in [0, 1]")
        self.leak = leak_arr

    def step(self, ctx, rng):
        return graddrop_mask(ctx, rng, self.leak)


class IMTLG(Strategy):
    kind = "imtl_g"

    def step(self, ctx, rng):
        return imtl_g_solve(ctx)


class IMTL(_LogScaleStrategy):
    """IMTL-L loss scales applied first, then IMTL-G on the scaled gradients."""

    kind = "imtl"
    needs_grads = True

    def step(self, ctx, rng):
        s = _log_scale(self.state, ctx.n_tasks)
        scale = np.exp(s)
        scaled = AggregationContext(ctx.losses * scale, ctx.grads * scale[:, None], ctx.shared_param_sign, ctx.iteration)
        inner = imtl_g_solve(scaled)
        weights = inner.effective_weights * scale
        self.state.log_scale = np.clip(s - self.state.lr * (scale * ctx.losses - 1.0), -LOG_SCALE_CLAMP, LOG_SCALE_CLAMP)
        return AggregationResult(inner.shared_gradient, weights, 1.0, inner.diagnostics)


REGISTRY: dict[str, type[Strategy]] = {
    cls.kind: cls for cls in (EW, RLW, GradNorm, UW, MGDA, DWA, PCGrad, GradDrop, IMTLG, IMTLL, IMTL, GradVac)
}


def make_strategy(kind: str, n_tasks: int, params: dict[str, Any] | None = None,
                  distribution: str | None = None) -> Strategy:
    try:
        cls = REGISTRY[kind]
    except KeyError:
        raise ValueError(f"unknown strategy {kind!r}; expected one of {', '.join(KINDS)}") from None
    params = dict(params or {})
    if cls is RLW and distribution is not None:
        params.setdefault("distribution", distribution)
    return cls(n_tasks, **params)
