from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from taskblend.math_core import (SingularMatrixError, ZeroVectorError, cosine_similarity, softmax,
                                 solve_linear_ridge)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_softmax_examples(backend):
    np.testing.assert_allclose(softmax([0, 0, 0]), [1 / 3] * 3, rtol=1e-15)
    np.testing.assert_allclose(softmax([7.5] * 4), [0.25] * 4, rtol=1e-15)
    np.testing.assert_allclose(softmax([math.log(1), math.log(2), math.log(3)]), [1 / 6, 2 / 6, 3 / 6], rtol=1e-14)


def test_softmax_is_stable_for_large_inputs(backend):
    out = softmax([1000.0, 1000.0, -1000.0])
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out[:2], [0.5, 0.5])


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=finite), finite)
def test_softmax_simplex_and_shift_invariance(v, shift):
    out = softmax(v)
    assert np.all(out > 0)
    assert abs(out.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(softmax(v + shift), out, rtol=1e-9, atol=1e-15)


def test_softmax_sum_over_many_random_vectors(rng):
    worst = max(abs(softmax(v).sum() - 1.0) for v in rng.normal(0, 10, (10_000, 5)))
    assert worst <= 1e-12


def test_ridge_solve_examples(backend):
    sol = solve_linear_ridge(np.eye(2), [1.0, 2.0])
    np.testing.assert_allclose(sol.x, [1, 2])
    assert not sol.fallback
    np.testing.assert_allclose(solve_linear_ridge(2 * np.eye(2), [4.0, 6.0]).x, [2, 3])


def test_ridge_fallback_on_singular_matrix(backend):
    a = np.array([[1.0, 1.0], [1.0, 1.0]])
    sol = solve_linear_ridge(a, [1.0, 1.0], ridge=1e-8)
    assert sol.fallback
    assert np.all(np.isfinite(sol.x))
    assert np.linalg.norm(a @ sol.x - 1.0) <= 1e-6


def test_ridge_fallback_applies_default_ridge(backend):
    sol = solve_linear_ridge(np.zeros((2, 2)), [1.0, 0.0])
    assert sol.fallback and sol.ridge == pytest.approx(1e-8)
    np.testing.assert_allclose(sol.x, [1e8, 0.0])


def test_ridge_rejects_bad_shapes():
    with pytest.raises(ValueError):
        solve_linear_ridge(np.eye(2), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        solve_linear_ridge(np.eye(2), [1.0, 2.0], ridge=-1.0)


def test_singular_after_ridge_raises(backend):
    # the ridge exactly cancels the diagonal, leaving a zero system
    a = -1e-8 * np.eye(2)
    with pytest.raises(SingularMatrixError):
        solve_linear_ridge(a, [1.0, 1.0], ridge=1e-8)


def test_ridge_residual_on_well_conditioned_systems(backend):
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        s = np.exp(rng.uniform(0, math.log(1e4), n))
        s[0], s[-1] = 1.0, 1e4 if n > 1 else 1.0
        a = (q * s) @ q.T
        b = rng.standard_normal(n)
        sol = solve_linear_ridge(a, b)
        assert np.linalg.norm(a @ sol.x - b) <= 1e-8 * (np.linalg.norm(b) + 1)
        np.testing.assert_allclose(sol.x, np.linalg.solve(a, b), rtol=1e-6, atol=1e-10)


def test_cosine_examples(backend):
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 0], [2, 0]) == pytest.approx(1.0, abs=1e-15)
    assert cosine_similarity([1, 0], [-1, 1]) == pytest.approx(-1 / math.sqrt(2), abs=1e-15)


def test_cosine_zero_vector(backend):
    with pytest.raises(ZeroVectorError):
        cosine_similarity([0, 0], [1, 0])


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 4, elements=st.floats(-10, 10)), arrays(np.float64, 4, elements=st.floats(-10, 10)),
       st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_cosine_symmetric_and_scale_invariant(u, v, a, b):
    if np.linalg.norm(u) < 1e-6 or np.linalg.norm(v) < 1e-6:
        return
    c = cosine_similarity(u, v)
    assert -1.0 <= c <= 1.0
    assert cosine_similarity(v, u) == pytest.approx(c, abs=1e-12)
    assert cosine_similarity(a * u, b * v) == pytest.approx(c, abs=1e-12)
