"""Verification suites: each check returns a :class:`CheckResult`.

Sizes, seeds and tolerances come from ``verify_defaults.json``; callers may
pass a partial override mapping that is deep-merged over it.
"""
from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import asdict, dataclass
from fractions import Fraction
from importlib import resources
from typing import Any, Callable

import numpy as np

from . import kernels
from .metrics import MetricSpec, delta_p, escape_frequency, estimate_kappa, rate_fit, theorem1_check
from .problems import (LandscapeProblem, Params, QuadraticTaskFamily, ToyMLPProblem,
                       finite_difference_check)
from .sampling import KINDS, SYMMETRIC, WeightDistribution, rng_stream, sample_weights
from .strategies import (IMTLL, UW, AggregationContext, GradVacState, graddrop_mask, gradvac_adjust,
                         imtl_g_solve, make_strategy, mgda_solve, pcgrad_project)
from .trainer import OptimizerSpec, TrainConfig, full_gradient, gradient_samples, noise_sample, train


@dataclass
class CheckResult:
    name: str
    criterion: int
    statistic: float
    threshold: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0

    def __post_init__(self):
        # numpy scalars are not JSON serializable
        self.statistic = float(self.statistic)
        self.passed = bool(self.passed)
        self.seconds = float(self.seconds)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] ({self.criterion:>2}) {self.name}: {self.statistic:.6g} {self.threshold}  {self.detail}".rstrip()


def load_defaults(overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    text = resources.files("taskblend").joinpath("verify_defaults.json").read_text()
    base = json.loads(text)
    if overrides:
        _merge(base, overrides)
    return base


def _merge(dst: dict, src: dict) -> None:
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _merge(dst[k], v)
        else:
            dst[k] = copy.deepcopy(v)


def _quadratic(p: dict) -> QuadraticTaskFamily:
    return QuadraticTaskFamily.generate(p["n_tasks"], p["dim"], p["n"], sigma_data=p["sigma_data"],
                                        curvatures=p.get("curvatures"), seed=p["data_seed"])


def _uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


# ----------------------------------------------------------- criterion 1


def check_simplex(cfg: dict) -> list[CheckResult]:
    c = cfg["simplex"]
    t, n = c["n_tasks"], c["n_samples"]
    out = []
    for i, kind in enumerate(KINDS):
        rng = rng_stream(c["seed"] + i, 1)
        dist = WeightDistribution(kind)
        samples = np.array([sample_weights(dist, t, rng) for _ in range(n)])
        sum_err = float(np.abs(samples.sum(axis=1) - 1.0).max())
        min_entry = float(samples.min())
        ok = sum_err <= c["simplex_tol"] and min_entry >= 0.0
        out.append(CheckResult(f"simplex[{kind}]", 1, sum_err, f"<= {c['simplex_tol']:g}", ok,
                               f"min entry {min_entry:.3g}"))
        if kind in SYMMETRIC:
            se = samples.std(axis=0, ddof=1) / math.sqrt(n)
            z = float(np.max(np.abs(samples.mean(axis=0) - 1.0 / t) / se))
            out.append(CheckResult(f"mean_uniform[{kind}]", 1, z, f"<= {c['se_multiple']:g} SE",
                                   z <= c["se_multiple"]))
    return out


# ----------------------------------------------------------- criterion 2


def check_unbiased(cfg: dict) -> list[CheckResult]:
    c = cfg["unbiased"]
    problem = _quadratic(c["problem"])
    theta = np.random.default_rng(c["theta_seed"]).standard_normal(problem.dim)
    params = Params(theta)
    target = full_gradient(problem, params)
    out = []
    for i, kind in enumerate(c["distributions"]):
        strategy = make_strategy("rlw", problem.n_tasks, {"distribution": kind})
        g = gradient_samples(problem, strategy, params, c["batch_size"], c["n_samples"],
                             rng_stream(c["seed"] + i, 0), rng_stream(c["seed"] + i, 1))
        se = g.std(axis=0, ddof=1) / math.sqrt(len(g))
        z = float(np.max(np.abs(g.mean(axis=0) - target) / se))
        out.append(CheckResult(f"unbiased_gradient[{kind}]", 2, z, f"<= {c['se_multiple']:g} SE", z <= c["se_multiple"]))
    return out


# ----------------------------------------------------------- criterion 3


def check_theorem1(cfg: dict) -> list[CheckResult]:
    c = cfg["theorem1"]
    family = _quadratic(c["problem"])
    theta_star = family.optimum(_uniform(family.n_tasks))
    kappa, kappa_se = estimate_kappa(family, theta_star, c["batch_size"], c["kappa_draws"],
                                     rng_stream(c["kappa_seed"], 0))
    runs = [train(family, TrainConfig(c["iterations"], c["batch_size"], seed=s, strategy="rlw",
                                      distribution=c["distribution"],
                                      optimizer=OptimizerSpec("sgd_fixed", lr=c["eta"]),
                                      log_stride=c["log_stride"]))
            for s in range(c["seeds"])]
    rep = theorem1_check(runs, family.strong_convexity, c["eta"], kappa)
    return [
        CheckResult("theorem1_bound", 3, rep.max_excess_in_se, f"<= {c['se_margin']:g} SE above bound",
                    rep.max_excess_in_se <= c["se_margin"],
                    f"max mean/bound {rep.max_violation_ratio:.4f}, kappa {kappa:.4g} +- {kappa_se:.2g}"),
        CheckResult("theorem1_plateau", 3, rep.plateau / rep.plateau_bound,
                    f"<= {c['plateau_slack']:g} x eta*kappa/2c", rep.plateau <= rep.plateau_bound * c["plateau_slack"],
                    f"plateau {rep.plateau:.4g}, eta*kappa/2c {rep.plateau_bound:.4g}"),
    ]


# ----------------------------------------------------------- criterion 4


def check_rate(cfg: dict) -> list[CheckResult]:
    c = cfg["rate"]
    family = _quadratic(c["problem"])
    c_min = family.strong_convexity
    runs = [train(family, TrainConfig(c["iterations"], c["batch_size"], seed=s, strategy="rlw",
                                      distribution=c["distribution"],
                                      optimizer=OptimizerSpec("sgd_decreasing", alpha_step=c["alpha_step"]),
                                      log_stride=c["log_stride"]))
            for s in range(c["seeds"])]
    slope = rate_fit(runs)
    ok = c["slope_min"] <= slope <= c["slope_max"] and c["alpha_step"] > 1.0 / (2.0 * c_min)
    return [CheckResult("decreasing_step_rate", 4, slope, f"in [{c['slope_min']:g}, {c['slope_max']:g}]", ok,
                        f"alpha*c = {c['alpha_step'] * c_min:g}")]


# ----------------------------------------------------------- criterion 5


def check_noise(cfg: dict) -> list[CheckResult]:
    c = cfg["noise"]
    family = _quadratic(c["problem"])
    params = Params(family.optimum(_uniform(family.n_tasks)))
    res = {}
    for kind, dist in (("ew", None), ("rlw", c["distribution"])):
        strategy = make_strategy(kind, family.n_tasks, None, dist)
        sq = noise_sample(family, strategy, params, c["batch_size"], c["n_samples"],
                          rng_stream(c["seed"], 0), rng_stream(c["seed"], 1))
        res[kind] = (sq.mean(), sq.std(ddof=1) / math.sqrt(len(sq)))
    gap = res["rlw"][0] - res["ew"][0]
    se = math.hypot(res["rlw"][1], res["ew"][1])
    margin = gap / se
    return [CheckResult("noise_ordering", 5, margin, f">= {c['se_margin']:g} SE", margin >= c["se_margin"],
                        f"E|xi_RLW|^2 {res['rlw'][0]:.4g}, E|xi_FW|^2 {res['ew'][0]:.4g}")]


# ----------------------------------------------------------- criterion 6


def default_landscape(p: dict) -> LandscapeProblem:
    return LandscapeProblem.generate(p["n_tasks"], p["n"], tilt=p["tilt"], sigma_data=p["sigma_data"],
                                     seed=p["data_seed"], init_radius=p["init_radius"])


def check_escape(cfg: dict) -> list[CheckResult]:
    c = cfg["escape"]
    problem = default_landscape(c["problem"])
    seeds = range(c["seeds"])
    frac = {}
    for kind, dist in (("ew", None), ("rlw", c["distribution"])):
        tc = TrainConfig(c["iterations"], c["batch_size"], strategy=kind, distribution=dist,
                         optimizer=OptimizerSpec("sgd_fixed", lr=c["lr"]), log_stride=c["iterations"] or 1)
        frac[kind] = escape_frequency(problem, tc, seeds).fraction
    ew, rlw = frac["ew"], frac["rlw"]
    in_range = c["ew_min"] < ew < c["ew_max"]
    m = problem.landscape_minima()
    return [
        CheckResult("escape_ew_in_range", 6, ew, f"in ({c['ew_min']:g}, {c['ew_max']:g})", in_range,
                    f"curvature ratio {m['sharp'].curvature / m['flat'].curvature:.3g}"),
        CheckResult("escape_rlw_ge_ew", 6, rlw - ew, ">= 0", rlw >= ew, f"RLW {rlw:.3f} vs EW {ew:.3f}"),
    ]


# ----------------------------------------------------------- criterion 7


def _pairs(rng, n, d):
    g = rng.standard_normal((n, 2, d))
    flip = np.einsum("ij,ij->i", g[:, 0], g[:, 1]) > 0
    g[flip, 1] *= -1.0
    return g


def check_oracles(cfg: dict) -> list[CheckResult]:
    c = cfg["oracles"]
    rng = np.random.default_rng(c["seed"])
    out = []
    t0 = time.perf_counter()

    worst = math.inf
    for g in _pairs(rng, c["pairs"], c["pair_dim"]):
        proj, _ = kernels.pcgrad(g, np.array([[1], [0]]))
        worst = min(worst, float(proj[0] @ g[1]), float(proj[1] @ g[0]))
    out.append(CheckResult("pcgrad_no_conflict", 7, worst, f">= -{c['pcgrad_tol']:g}", worst >= -c["pcgrad_tol"]))

    worst = 0.0
    for g in rng.standard_normal((c["pairs"], 2, c["pair_dim"])):
        diff = g[0] - g[1]
        gamma = min(1.0, max(0.0, float((g[1] - g[0]) @ g[1] / (diff @ diff))))
        lam = mgda_solve(AggregationContext(np.ones(2), g)).effective_weights
        worst = max(worst, abs(lam[0] - gamma))
    out.append(CheckResult("mgda_two_task_closed_form", 7, worst, f"<= {c['mgda_gamma_tol']:g}", worst <= c["mgda_gamma_tol"]))

    worst = 0.0
    for i in range(c["instances"]):
        t = 2 + i % (c["mgda_max_tasks"] - 1)
        res = mgda_solve(AggregationContext(np.ones(t), rng.standard_normal((t, c["mgda_dim"]))))
        worst = max(worst, res.diagnostics["duality_gap"])
    out.append(CheckResult("mgda_duality_gap", 7, worst, f"<= {c['mgda_gap_tol']:g}", worst <= c["mgda_gap_tol"]))

    worst = 0.0
    for i in range(c["instances"]):
        t = 2 + i % 4
        g = rng.standard_normal((t, 10))
        agg = imtl_g_solve(AggregationContext(np.ones(t), g)).shared_gradient
        proj = (g / np.linalg.norm(g, axis=1, keepdims=True)) @ agg
        worst = max(worst, float(proj.max() - proj.min()))
    out.append(CheckResult("imtl_g_equal_projection", 7, worst, f"<= {c['imtl_tol']:g}", worst <= c["imtl_tol"]))

    worst = 0.0
    for i in range(c["instances"]):
        g = rng.standard_normal((3, 6))
        ctx = AggregationContext(np.ones(3), g)
        a = pcgrad_project(ctx, np.random.default_rng(i)).shared_gradient
        b = gradvac_adjust(ctx, GradVacState(beta=0.0), np.random.default_rng(i)).shared_gradient
        worst = max(worst, float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(a))))))
    out.append(CheckResult("gradvac_zero_target_is_pcgrad", 7, worst, f"<= {c['gradvac_tol']:g}", worst <= c["gradvac_tol"]))

    worst = 0.0
    for i in range(c["instances"]):
        g = rng.standard_normal((4, 8))
        ctx = AggregationContext(np.ones(4), g, np.where(rng.standard_normal(8) < 0, -1.0, 1.0))
        agg = graddrop_mask(ctx, rng, leak=np.ones(4)).shared_gradient
        worst = max(worst, float(np.max(np.abs(agg - g.sum(axis=0)))))
    out.append(CheckResult("graddrop_full_leak_is_sum", 7, worst, "== 0", worst == 0.0))

    for cls, target, name in ((UW, lambda l: 1.0 / (2.0 * l), "uw"), (IMTLL, lambda l: 1.0 / l, "imtl_l")):
        worst = 0.0
        for _ in range(10):
            losses = rng.uniform(0.5, 3.0, 3)
            strat = cls(3)
            ctx = AggregationContext(losses, np.ones((3, 1)))
            for _ in range(c["stationary_steps"]):
                strat.step(ctx, rng)
            s = strat.state.log_scale
            lam = np.exp(-s) if cls is UW else np.exp(s)
            worst = max(worst, float(np.max(np.abs(lam - target(losses)))))
        out.append(CheckResult(f"{name}_stationary_weights", 7, worst, f"<= {c['stationary_tol']:g}",
                               worst <= c["stationary_tol"]))
    elapsed = time.perf_counter() - t0
    for r in out:
        r.seconds = elapsed / len(out)
    return out


# ----------------------------------------------------------- criterion 8


def delta_p_example() -> tuple[list, list, MetricSpec, Fraction]:
    """Two tasks with mixed metric directions and an exact rational answer."""
    spec = MetricSpec(((("acc", True),), (("err", False), ("score", True))))
    method = [[0.8], [0.9, 40.0]]
    base = [[0.75], [1.2, 50.0]]
    f = Fraction
    exact = f(100) * f(1, 2) * ((f("0.8") - f("0.75")) / f("0.75")
                                + (-(f("0.9") - f("1.2")) / f("1.2") + (f(40) - f(50)) / f(50)) / 2)
    return method, base, spec, exact


def check_delta_p(cfg: dict) -> list[CheckResult]:
    method, base, spec, exact = delta_p_example()
    self_cmp = delta_p(base, base, spec)
    got = delta_p(method, base, spec)
    err = abs(got - float(exact))
    return [
        CheckResult("delta_p_self_is_zero", 8, self_cmp, "== 0", self_cmp == 0.0),
        CheckResult("delta_p_mixed_example", 8, err, "<= 1e-12", err <= 1e-12, f"got {got:+.6f}, exact {float(exact):+.6f}"),
    ]


# ----------------------------------------------------------- criterion 10


def gradcheck_problems(seed: int) -> dict[str, Any]:
    return {
        "quadratic": QuadraticTaskFamily.generate(3, 5, 20, sigma_data=1.0, curvatures=[1.0, 2.0, 0.5], seed=seed),
        "toy_mlp": ToyMLPProblem.generate(3, 3, 5, 2, 20, noise=0.1, seed=seed),
        "landscape": LandscapeProblem.generate(2, 64, seed=seed),
    }


def _random_params(name, problem, rng) -> Params:
    if name == "quadratic":
        return Params(2.0 * rng.standard_normal(problem.dim))
    if name == "landscape":
        return Params(np.array([rng.uniform(-1.0, 4.0)]))
    p = problem.init_params(rng)
    p.theta = p.theta + 0.3 * rng.standard_normal(p.theta.size)
    p.heads = [h + 0.3 * rng.standard_normal(h.size) for h in p.heads]
    return p


def check_gradients_and_determinism(cfg: dict) -> list[CheckResult]:
    c = cfg["gradcheck"]
    out = []
    rng = np.random.default_rng(c["seed"])
    for name, problem in gradcheck_problems(c["seed"]).items():
        worst = 0.0
        for _ in range(c["points"]):
            params = _random_params(name, problem, rng)
            batch = problem.sample_batch(4, rng)
            worst = max(worst, finite_difference_check(problem, params, batch, c["step"]))
        out.append(CheckResult(f"finite_difference[{name}]", 10, worst, f"<= {c['tol']:g}", worst <= c["tol"]))
    runs = [
        ("quadratic", "rlw", "normal", OptimizerSpec("sgd_fixed", lr=0.05)),
        ("toy_mlp", "rlw", "dirichlet", OptimizerSpec("adam", lr=0.01)),
        ("landscape", "rlw", "random_normal", OptimizerSpec("sgd_fixed", lr=0.02)),
        ("quadratic", "pcgrad", None, OptimizerSpec("sgd_fixed", lr=0.05)),
        ("toy_mlp", "graddrop", None, OptimizerSpec("sgd_fixed", lr=0.05)),
    ]
    probs = gradcheck_problems(c["seed"])
    for name, kind, dist, opt in runs:
        tc = TrainConfig(c["determinism_iterations"], 4, seed=7, strategy=kind, distribution=dist, optimizer=opt)
        a = train(probs[name], tc).to_csv()
        b = train(probs[name], tc).to_csv()
        label = kind if dist is None else f"{kind}-{dist}"
        out.append(CheckResult(f"deterministic_csv[{name}/{label}]", 10, float(a != b), "== 0 differing logs", a == b))
    return out


# ----------------------------------------------------------- criterion 9


def check_parity(cfg: dict) -> list[CheckResult]:
    c = cfg["parity"]
    p = c["problem"]
    problem = ToyMLPProblem.generate(p["n_tasks"], p["d_in"], p["hidden"], p["d_out"], p["n"],
                                     noise=p["noise"], seed=p["data_seed"])

    def final(kind, dist):
        vals = []
        for s in range(c["seeds"]):
            tc = TrainConfig(c["iterations"], c["batch_size"], seed=s, strategy=kind, distribution=dist,
                             optimizer=OptimizerSpec("adam", lr=c["lr"]), log_stride=c["iterations"] or 1)
            vals.append(float(np.mean(train(problem, tc).final_losses)))
        return float(np.mean(vals))

    ew = final("ew", None)
    out = []
    for dist in c["distributions"]:
        rel = final("rlw", dist) / ew - 1.0
        out.append(CheckResult(f"parity[{dist}]", 9, rel, f"|.| <= {c['rel_tol']:g}", abs(rel) <= c["rel_tol"],
                               f"EW final mean loss {ew:.5g}"))
    return out


# ---------------------------------------------------------------- suites


CHECKS: dict[int, Callable[[dict], list[CheckResult]]] = {
    1: check_simplex,
    2: check_unbiased,
    3: check_theorem1,
    4: check_rate,
    5: check_noise,
    6: check_escape,
    7: check_oracles,
    8: check_delta_p,
    9: check_parity,
    10: check_gradients_and_determinism,
}

SUITES: dict[str, tuple[int, ...]] = {
    "invariants": (1, 2, 7, 8, 10),
    "theorem1": (3,),
    "rate": (4,),
    "noise": (5,),
    "escape": (6,),
    "parity": (9,),
}
SUITE_NAMES = tuple(SUITES) + ("all",)


def run_criterion(number: int, cfg: dict | None = None) -> list[CheckResult]:
    cfg = cfg if cfg is not None else load_defaults()
    t0 = time.perf_counter()
    results = CHECKS[number](cfg)
    elapsed = time.perf_counter() - t0
    for r in results:
        if not r.seconds:
            r.seconds = elapsed / len(results)
    return results


def run_suite(name: str, cfg: dict | None = None, progress: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    if name not in SUITE_NAMES:
        raise KeyError(name)
    cfg = cfg if cfg is not None else load_defaults()
    numbers = sorted({n for s in SUITES.values() for n in s}) if name == "all" else SUITES[name]
    results = []
    for number in numbers:
        for r in run_criterion(number, cfg):
            results.append(r)
            if progress:
                progress(r)
    return results


def report_json(results: list[CheckResult]) -> str:
    return json.dumps({"passed": all(r.passed for r in results), "checks": [asdict(r) for r in results]}, indent=2)
