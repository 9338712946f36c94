from __future__ import annotations

from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from taskblend.metrics import (InsufficientDataError, MetricSpec, StepSizeError, ZeroBaselineError, delta_p,
                               escape_frequency, estimate_kappa, quadratic_kappa, rate_fit, theorem1_check)
from taskblend.problems import LandscapeProblem, QuadraticTaskFamily
from taskblend.sampling import rng_stream
from taskblend.trainer import OptimizerSpec, TrainConfig, train

HIGH = MetricSpec(((("acc", True),),))
LOW = MetricSpec(((("err", False),),))


# --------------------------------------------------------------------- delta_p


def test_delta_p_examples():
    assert delta_p([[3.0], [4.0]], [[3.0], [4.0]], MetricSpec.uniform(2)) == 0.0
    assert delta_p([[110.0]], [[100.0]], HIGH) == pytest.approx(10.0)
    assert delta_p([[90.0]], [[100.0]], LOW) == pytest.approx(10.0)


def test_delta_p_mixed_directions_against_exact_fraction():
    from taskblend.verify import delta_p_example

    method, base, spec, _ = delta_p_example()
    f = Fraction
    # task 1: (0.8 - 0.75)/0.75 = 1/15; task 2: (+1/4 - 1/5)/2 = 1/40
    exact = f(100, 2) * (f(1, 15) + f(1, 40))
    assert exact == f(55, 12)
    assert abs(delta_p(method, base, spec) - float(exact)) <= 1e-12


def test_delta_p_is_linear_in_each_entry():
    spec = MetricSpec(((("a", True), ("b", False)), (("c", True),)))
    base = [[2.0, 5.0], [4.0]]

    def f(x):
        return delta_p([[x, 5.0], [4.0]], base, spec)

    xs = np.linspace(-3, 7, 9)
    vals = np.array([f(x) for x in xs])
    np.testing.assert_allclose(np.diff(vals, 2), 0, atol=1e-12)


def test_delta_p_errors():
    with pytest.raises(ZeroBaselineError):
        delta_p([[1.0]], [[0.0]], HIGH)
    with pytest.raises(ValueError):
        delta_p([[1.0], [1.0]], [[1.0]], HIGH)
    with pytest.raises(ValueError):
        MetricSpec(((),))


# ----------------------------------------------------------------------- kappa


def test_kappa_estimate_matches_closed_form():
    fam = QuadraticTaskFamily.generate(3, 4, 60, curvatures=[1.0, 2.0, 0.5], seed=5)
    star = fam.optimum(np.ones(3) / 3)
    est, se = estimate_kappa(fam, star, 4, 10_000, rng_stream(0, 0))
    exact = quadratic_kappa(fam, star, 4)
    assert abs(est - exact) <= 4 * se


# ------------------------------------------------------------- plateau bound


@pytest.fixture(scope="module")
def small_family():
    return QuadraticTaskFamily.generate(3, 4, 60, curvatures=[1.0, 1.5, 2.0], seed=6)


def _runs(fam, eta, seeds=40, iters=1200, stride=20):
    return [train(fam, TrainConfig(iters, 4, seed=s, strategy="rlw", distribution="normal",
                                   optimizer=OptimizerSpec(lr=eta), log_stride=stride)) for s in range(seeds)]


def test_plateau_bound_initial_point(small_family):
    fam = small_family
    star = fam.optimum(np.ones(3) / 3)
    kappa = quadratic_kappa(fam, star, 4)
    rep = theorem1_check(_runs(fam, 0.05), fam.strong_convexity, 0.05, kappa)
    assert rep.iters[0] == 0
    assert rep.bound[0] == pytest.approx(rep.mean[0] + 0.05 * kappa / 2)
    assert rep.mean[0] / rep.bound[0] <= 1
    assert rep.max_excess_in_se <= 3
    assert rep.plateau <= 1.1 * rep.plateau_bound


def test_plateau_scales_with_step(small_family):
    fam = small_family
    star = fam.optimum(np.ones(3) / 3)
    kappa = quadratic_kappa(fam, star, 4)
    small = theorem1_check(_runs(fam, 0.02, iters=2500, stride=50), 1.0, 0.02, kappa)
    large = theorem1_check(_runs(fam, 0.04, iters=2500, stride=50), 1.0, 0.04, kappa)
    assert large.plateau_bound == pytest.approx(2 * small.plateau_bound)
    assert large.plateau > small.plateau


def test_plateau_step_size_precondition(small_family):
    with pytest.raises(StepSizeError):
        theorem1_check([], 1.0, 0.6, 1.0)


def test_plateau_bound_detects_a_violation(small_family):
    # a bound computed with a tenfold too small kappa must be reported as violated
    fam = small_family
    kappa = quadratic_kappa(fam, fam.optimum(np.ones(3) / 3), 4)
    rep = theorem1_check(_runs(fam, 0.05, seeds=20), 1.0, 0.05, kappa / 100)
    assert rep.max_excess_in_se > 3


# ----------------------------------------------------------------------- rate


def test_rate_fit_decreasing_step(small_family):
    runs = [train(small_family, TrainConfig(3000, 4, seed=s, strategy="rlw", distribution="normal",
                                            optimizer=OptimizerSpec("sgd_decreasing", alpha_step=1.0), log_stride=30))
            for s in range(40)]
    assert -1.25 <= rate_fit(runs) <= -0.75


def test_rate_fit_fixed_step_plateau(small_family):
    runs = _runs(small_family, 0.05, seeds=40, iters=3000, stride=30)
    assert abs(rate_fit(runs)) < 0.2


def test_rate_fit_noiseless_contraction():
    fam = QuadraticTaskFamily.generate(1, 3, 10, sigma_data=0.0, seed=0, theta0=[3.0, 3.0, 3.0])
    rec = train(fam, TrainConfig(200, 10, optimizer=OptimizerSpec(lr=0.05), log_stride=2))
    assert rate_fit(rec) < -3


def test_rate_fit_insufficient_data(small_family):
    rec = train(small_family, TrainConfig(9, 4, optimizer=OptimizerSpec(lr=0.05)))
    with pytest.raises(InsufficientDataError):
        rate_fit(rec)


# --------------------------------------------------------------------- escape


def test_escape_zero_noise_stays_in_sharp_basin():
    prob = LandscapeProblem.generate(sigma_data=0.0, tilt=0.0, init_radius=0.0)
    cfg = TrainConfig(200, 4, strategy="ew", optimizer=OptimizerSpec(lr=1e-3))
    res = escape_frequency(prob, cfg, range(5))
    assert res.fraction == 0.0


def test_escape_from_flat_basin_start_is_one():
    prob = LandscapeProblem.generate(init_center=2.9, init_radius=0.1)
    for kind, dist in (("ew", None), ("rlw", "normal"), ("mgda", None)):
        cfg = TrainConfig(200, 4, strategy=kind, distribution=dist, optimizer=OptimizerSpec(lr=1e-3))
        assert escape_frequency(prob, cfg, range(10)).fraction == 1.0


def test_escape_is_reproducible():
    prob = LandscapeProblem.generate()
    cfg = TrainConfig(300, 4, strategy="rlw", distribution="normal", optimizer=OptimizerSpec(lr=0.02))
    a = escape_frequency(prob, cfg, range(20))
    b = escape_frequency(prob, replace(cfg), range(20))
    np.testing.assert_array_equal(a.escaped, b.escaped)
