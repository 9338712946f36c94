from __future__ import annotations

import csv
import io
import json
import math

import numpy as np
import pytest

from taskblend.problems import LandscapeProblem, Params, QuadraticTaskFamily, ToyMLPProblem
from taskblend.sampling import rng_stream
from taskblend.strategies import make_strategy
from taskblend.trainer import (DivergenceError, OptimizerSpec, TrainConfig, full_gradient, gradient_samples,
                               lr_schedule, noise_sample, train)


@pytest.fixture(scope="module")
def family():
    return QuadraticTaskFamily.generate(3, 4, 40, curvatures=[1.0, 1.5, 2.0], seed=0)


def test_lr_schedule_examples():
    assert lr_schedule(OptimizerSpec("sgd_fixed", lr=0.01), 123) == 0.01
    assert lr_schedule(OptimizerSpec("sgd_decreasing", alpha_step=1.0), 10) == pytest.approx(0.1)
    assert lr_schedule(OptimizerSpec("sgd_decreasing", alpha_step=2.0), 4) == 0.5
    with pytest.raises(ValueError):
        lr_schedule(OptimizerSpec("sgd_decreasing"), 0)
    with pytest.raises(ValueError):
        OptimizerSpec("sgd_fixed", lr=0.0)
    with pytest.raises(ValueError):
        OptimizerSpec("rmsprop")


def test_single_task_contraction():
    fam = QuadraticTaskFamily.generate(1, 3, 50, seed=1, theta0=[5.0, -5.0, 5.0])
    rec = train(fam, TrainConfig(200, 4, seed=0, optimizer=OptimizerSpec(lr=0.5)))
    assert rec.dist_sq[-1] <= rec.initial_dist_sq
    # mean over seeds decreases over the transient
    means = np.mean([train(fam, TrainConfig(20, 4, seed=s, optimizer=OptimizerSpec(lr=0.5))).dist_sq for s in range(30)], axis=0)
    assert np.all(np.diff(means[:5]) < 0)


def test_zero_iterations_keeps_initial_state(family):
    rec = train(family, TrainConfig(0, 4))
    assert rec.iters == [] and rec.to_csv().count("\n") == 1
    assert rec.initial_dist_sq == pytest.approx(float(np.sum(family.optimum(np.ones(3) / 3) ** 2)))
    np.testing.assert_array_equal(rec.final_losses, rec.initial_losses)


def test_bit_identical_runs(family):
    cfg = TrainConfig(300, 4, seed=42, strategy="rlw", distribution="normal", optimizer=OptimizerSpec(lr=0.1))
    a, b = train(family, cfg), train(family, cfg)
    assert a.to_csv() == b.to_csv()
    assert a.final_theta.tobytes() == b.final_theta.tobytes()


def test_different_seeds_differ(family):
    base = TrainConfig(50, 4, strategy="rlw", distribution="normal", optimizer=OptimizerSpec(lr=0.1))
    a = train(family, base)
    b = train(family, TrainConfig(**{**base.__dict__, "seed": 1}))
    assert a.to_csv() != b.to_csv()


def test_ew_equals_point_mass_rlw(family):
    opt = OptimizerSpec(lr=0.1)
    ew = train(family, TrainConfig(200, 4, seed=3, strategy="ew", optimizer=opt))
    pm = train(family, TrainConfig(200, 4, seed=3, strategy="rlw", distribution="point_mass", optimizer=opt))
    assert ew.to_csv() == pm.to_csv()


def test_ew_and_rlw_see_identical_batches(family):
    opt = OptimizerSpec(lr=0.1)
    ew = train(family, TrainConfig(1, 4, seed=9, strategy="ew", optimizer=opt))
    rlw = train(family, TrainConfig(1, 4, seed=9, strategy="rlw", distribution="normal", optimizer=opt))
    np.testing.assert_array_equal(ew.losses[0], rlw.losses[0])
    assert not np.array_equal(ew.weights[0], rlw.weights[0])


def test_log_stride_and_csv_schema(family):
    rec = train(family, TrainConfig(50, 4, log_stride=10, strategy="graddrop", optimizer=OptimizerSpec(lr=0.1)))
    rows = list(csv.reader(io.StringIO(rec.to_csv())))
    assert rows[0] == ["iter", "loss_1", "loss_2", "loss_3", "weight_1", "weight_2", "weight_3", "grad_norm", "dist_sq_opt"]
    assert [int(r[0]) for r in rows[1:]] == [10, 20, 30, 40, 50]
    assert rows[1][4:7] == ["nan"] * 3  # GradDrop reports no scalar weights
    for row, loss, gn in zip(rows[1:], rec.losses, rec.grad_norms):
        assert [float(v) for v in row[1:4]] == loss.tolist()  # 17 digits round-trip exactly
        assert float(row[7]) == gn


def test_summary_json(family):
    rec = train(family, TrainConfig(5, 4))
    summary = json.loads(rec.summary_json())
    assert summary["config"]["iterations"] == 5
    assert len(summary["final_losses"]) == 3
    assert summary["wall_time"] >= 0


def test_divergence_guard(family):
    with pytest.raises(DivergenceError) as info:
        train(family, TrainConfig(500, 4, optimizer=OptimizerSpec(lr=5.0)))
    assert info.value.iteration > 1


def test_heads_follow_their_own_gradient():
    prob = ToyMLPProblem.generate(2, 3, 4, 1, 16, seed=0)
    cfg = TrainConfig(1, 3, seed=5, strategy="rlw", distribution="normal", optimizer=OptimizerSpec(lr=0.1))
    rec = train(prob, cfg)
    # replay the single step by hand
    params = prob.init_params(rng_stream(5, 2))
    batch = prob.sample_batch(3, rng_stream(5, 0))
    _, shared, heads = prob.loss_and_grads(params, batch)
    w = rec.weights[0]
    theta = params.theta - 0.1 * (w @ shared)
    new = [h - 0.1 * g for h, g in zip(params.heads, heads)]
    expected = prob.loss_and_grads(Params(theta, new), prob.full_batch())[0]
    np.testing.assert_allclose(rec.final_losses, expected, rtol=1e-12)


def test_adam_first_step_matches_oracle():
    fam = QuadraticTaskFamily.generate(1, 2, 10, seed=2, theta0=[1.0, -1.0])
    opt = OptimizerSpec("adam", lr=0.01)
    rec = train(fam, TrainConfig(1, 2, seed=0, optimizer=opt))
    batch = fam.sample_batch(2, rng_stream(0, 0))
    g = fam.loss_and_grads(Params(np.array([1.0, -1.0])), batch)[1][0]
    m_hat, v_hat = g, g * g  # bias-corrected first moments after one step
    expected = np.array([1.0, -1.0]) - 0.01 * m_hat / (np.sqrt(v_hat) + 1e-8)
    np.testing.assert_allclose(rec.final_theta, expected, rtol=1e-12)


def test_every_strategy_trains_on_every_problem():
    problems = [QuadraticTaskFamily.generate(3, 3, 20, seed=0), ToyMLPProblem.generate(3, 2, 3, 1, 20, seed=0),
                LandscapeProblem.generate(2, 20, seed=0)]
    from taskblend.strategies import KINDS

    for prob in problems:
        for kind in KINDS:
            rec = train(prob, TrainConfig(10, 2, strategy=kind, optimizer=OptimizerSpec(lr=0.01)))
            assert np.all(np.isfinite(rec.final_losses))


# ---------------------------------------------------------------- noise


def test_full_batch_fixed_weight_noise_is_zero(family):
    sq = noise_sample(family, make_strategy("ew", 3), Params(np.ones(4)), family.n, 10, rng_stream(0, 0))
    assert np.all(sq == 0.0)


def test_full_batch_rlw_noise_is_nonzero(family):
    params = Params(family.optimum(np.ones(3) / 3))
    sq = noise_sample(family, make_strategy("rlw", 3, distribution="normal"), params, family.n, 10, rng_stream(0, 0))
    assert np.all(sq > 0)


def test_rlw_noise_exceeds_fixed_weight_noise():
    fam = QuadraticTaskFamily.generate(2, 5, 100, seed=3)
    params = Params(fam.optimum([0.5, 0.5]))
    ew = noise_sample(fam, make_strategy("ew", 2), params, 8, 10_000, rng_stream(1, 0), rng_stream(1, 1))
    rlw = noise_sample(fam, make_strategy("rlw", 2, distribution="normal"), params, 8, 10_000, rng_stream(1, 0), rng_stream(1, 1))
    se = math.hypot(ew.std() / 100, rlw.std() / 100)
    assert rlw.mean() - ew.mean() >= 3 * se


def test_noise_decomposition_matches_oracle():
    # E|xi_RLW|^2 = E|xi_FW|^2 + E|(lambda - mu)^T G_batch|^2 with independent
    # weights and batches; check on a small Monte-Carlo sample
    fam = QuadraticTaskFamily.generate(2, 3, 50, seed=4)
    params = Params(fam.optimum([0.5, 0.5]))
    n = 20_000
    ew = noise_sample(fam, make_strategy("ew", 2), params, 4, n, rng_stream(2, 0), rng_stream(2, 1))
    rlw = noise_sample(fam, make_strategy("rlw", 2, distribution="normal"), params, 4, n, rng_stream(2, 0), rng_stream(2, 1))
    data_rng, w_rng = rng_stream(3, 0), rng_stream(3, 1)
    extra = np.empty(n)
    from taskblend.sampling import WeightDistribution, sample_weights

    for i in range(n):
        g = fam.loss_and_grads(params, fam.sample_batch(4, data_rng))[1]
        d = (sample_weights(WeightDistribution("normal"), 2, w_rng) - 0.5) @ g
        extra[i] = d @ d
    lhs = rlw.mean()
    rhs = ew.mean() + extra.mean()
    se = math.sqrt(rlw.var() / n + ew.var() / n + extra.var() / n)
    assert abs(lhs - rhs) <= 4 * se


def test_gradient_samples_unbiased(family):
    params = Params(np.linspace(-1, 1, 4))
    target = full_gradient(family, params)
    g = gradient_samples(family, make_strategy("rlw", 3, distribution="dirichlet"), params, 4, 20_000,
                         rng_stream(4, 0), rng_stream(4, 1))
    se = g.std(axis=0, ddof=1) / math.sqrt(len(g))
    assert np.all(np.abs(g.mean(axis=0) - target) <= 4 * se)
