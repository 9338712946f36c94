from __future__ import annotations

import math

import numpy as np
import pytest

from taskblend.sampling import (KINDS, POINT_MASS, SYMMETRIC, WeightDistribution, normalize, rng_stream,
                                sample_raw, sample_weights)


def test_constrained_bernoulli_is_one_hot():
    rng = rng_stream(0, 1)
    for t in (3, 5):
        for _ in range(100):
            raw = sample_raw(WeightDistribution("constrained_bernoulli"), t, rng)
            assert sorted(raw) == [0.0] * (t - 1) + [1.0]
            w = sample_weights(WeightDistribution("constrained_bernoulli"), t, rng)
            np.testing.assert_array_equal(np.sort(w), raw[np.argsort(raw)])


def test_bernoulli_single_task_always_one():
    rng = rng_stream(1, 1)
    for _ in range(200):
        assert sample_raw(WeightDistribution("bernoulli"), 1, rng).tolist() == [1.0]


def test_bernoulli_never_all_zero():
    rng = rng_stream(2, 1)
    for _ in range(2000):
        raw = sample_raw(WeightDistribution("bernoulli"), 2, rng)
        assert set(raw.tolist()) <= {0.0, 1.0} and raw.sum() >= 1


def test_dirichlet_raw_is_on_simplex():
    rng = rng_stream(3, 1)
    raw = sample_raw(WeightDistribution("dirichlet"), 4, rng)
    assert np.all((raw > 0) & (raw < 1))
    assert raw.sum() == pytest.approx(1.0, abs=1e-12)


def test_normalize_examples():
    np.testing.assert_allclose(normalize([1, 0, 1], "bernoulli"), [0.5, 0, 0.5])
    np.testing.assert_allclose(normalize([0, 0], "normal"), [0.5, 0.5])
    np.testing.assert_allclose(normalize([math.log(2), 0, 0], "uniform"), [0.5, 0.25, 0.25], rtol=1e-15)


def test_sum_normalization_rejects_zero_sum():
    with pytest.raises(ZeroDivisionError):
        normalize([0.0, 0.0], "constrained_bernoulli")


@pytest.mark.parametrize("kind", KINDS + (POINT_MASS,))
def test_single_task_weight_is_one(kind):
    assert sample_weights(WeightDistribution(kind), 1, rng_stream(4, 1)).tolist() == [1.0]


@pytest.mark.parametrize("kind", KINDS)
def test_seeded_sequences_are_bit_identical(kind):
    def draw():
        rng = rng_stream(99, 1)
        dist = WeightDistribution(kind)
        return np.array([sample_weights(dist, 3, rng) for _ in range(50)])

    a, b = draw(), draw()
    assert a.tobytes() == b.tobytes()


def test_streams_are_distinct():
    a = rng_stream(5, 0).standard_normal(8)
    b = rng_stream(5, 1).standard_normal(8)
    assert not np.array_equal(a, b)


def test_stream_matches_documented_construction():
    ss = np.random.SeedSequence(2024, spawn_key=(1,))
    expected = np.random.Generator(np.random.PCG64(ss)).random(4)
    np.testing.assert_array_equal(rng_stream(2024, 1).random(4), expected)


@pytest.mark.parametrize("kind", KINDS)
def test_simplex_membership(kind):
    rng = rng_stream(6, 1)
    dist = WeightDistribution(kind)
    w = np.array([sample_weights(dist, 4, rng) for _ in range(5000)])
    assert w.min() >= 0
    assert np.abs(w.sum(axis=1) - 1).max() <= 1e-9


@pytest.mark.parametrize("kind", SYMMETRIC)
def test_symmetric_mean_is_uniform(kind):
    rng = rng_stream(7, 1)
    dist = WeightDistribution(kind)
    n, t = 20_000, 4
    w = np.array([sample_weights(dist, t, rng) for _ in range(n)])
    se = w.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(w.mean(axis=0) - 1 / t) <= 4 * se)


def test_random_normal_redraws_moments_each_call():
    rng = rng_stream(8, 1)
    dist = WeightDistribution("random_normal")
    sample_raw(dist, 3, rng)
    assert dist._moments is None


def test_random_normal_per_run_freezes_moments():
    rng = rng_stream(9, 1)
    dist = WeightDistribution("random_normal", per_run=True)
    sample_raw(dist, 3, rng)
    first = dist._moments.copy()
    for _ in range(10):
        sample_raw(dist, 3, rng)
    np.testing.assert_array_equal(dist._moments, first)
    assert np.all((first >= 0) & (first <= 1))


def test_random_normal_matches_oracle_draw_order():
    # oracle: means, then variances, then one standard normal per task
    rng = rng_stream(10, 1)
    m = rng.uniform(0, 1, 3)
    v = rng.uniform(0, 1, 3)
    z = rng.standard_normal(3)
    got = sample_raw(WeightDistribution("random_normal"), 3, rng_stream(10, 1))
    np.testing.assert_allclose(got, m + np.sqrt(v) * z, rtol=1e-15)


def test_point_mass_consumes_no_randomness():
    rng = rng_stream(11, 1)
    state = rng.bit_generator.state
    np.testing.assert_array_equal(sample_weights(WeightDistribution(POINT_MASS), 3, rng), np.full(3, 1 / 3))
    assert rng.bit_generator.state == state


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        WeightDistribution("gamma")
