import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mixattack.errors import NumericError
from mixattack.numerics import (l1_steepest_step, log_sum_exp, project_l1_ball, segment_softmax,
                                softmax, sym_eigen)

from oracles import best_signed_coordinate, theta_scan_projection


def test_projection_inside_is_identity():
    np.testing.assert_array_equal(project_l1_ball([0.3, 0.1], 1.0), [0.3, 0.1])


def test_projection_single_coordinate():
    np.testing.assert_allclose(project_l1_ball([2.0, 0.0], 1.0), [1.0, 0.0])


def test_projection_symmetric_pair():
    np.testing.assert_allclose(project_l1_ball([1.0, 1.0], 1.0), [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(theta_scan_projection([1.0, 1.0], 1.0), [0.5, 0.5], atol=1e-12)


def test_projection_matches_theta_scan(rng):
    for _ in range(50):
        v = rng.normal(size=10) * rng.uniform(0.1, 3)
        r = rng.uniform(0.05, 2.0)
        np.testing.assert_allclose(project_l1_ball(v, r), theta_scan_projection(v, r), atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)),
       st.floats(1e-3, 20))
def test_projection_properties(v, radius):
    w = project_l1_ball(v, radius)
    assert np.abs(w).sum() <= radius * (1 + 1e-12) + 1e-12
    # sign preserving and never larger in magnitude
    assert np.all(w * v >= -1e-15)
    assert np.all(np.abs(w) <= np.abs(v) + 1e-12)
    # idempotent
    np.testing.assert_allclose(project_l1_ball(w, radius), w, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-10, 10)),
       st.floats(0.01, 5))
def test_projection_is_nearest_feasible_point(v, radius):
    w = project_l1_ball(v, radius)
    rng = np.random.default_rng(0)
    for _ in range(20):
        z = project_l1_ball(w + rng.normal(scale=0.3, size=len(v)), radius)
        assert np.linalg.norm(v - w) <= np.linalg.norm(v - z) + 1e-9


def test_projection_rejects_bad_input():
    with pytest.raises(ValueError):
        project_l1_ball([1.0], 0.0)
    with pytest.raises(NumericError):
        project_l1_ball([np.nan, 1.0], 1.0)


def test_steepest_step_examples():
    np.testing.assert_allclose(l1_steepest_step([0.1, -0.5, 0.2], 0.3), [0.0, -0.3, 0.0])
    np.testing.assert_array_equal(l1_steepest_step([0.0, 0.0, 0.0], 0.3), [0.0, 0.0, 0.0])


def test_steepest_step_dominates_signed_coordinates(rng):
    for _ in range(200):
        g = rng.normal(size=rng.integers(1, 20))
        v = l1_steepest_step(g, 0.7)
        assert np.abs(v).sum() == pytest.approx(0.7)
        assert v @ g >= best_signed_coordinate(g, 0.7)


def test_steepest_step_top_k_spreads_budget():
    v = l1_steepest_step([3.0, -2.0, 1.0], 0.6, k=2)
    np.testing.assert_allclose(v, [0.3, -0.3, 0.0])


def test_eigen_small_cases():
    e = sym_eigen(np.eye(3))
    np.testing.assert_allclose(e.eigenvalues, [1, 1, 1])
    e = sym_eigen(np.diag([1.0, 3.0]))
    np.testing.assert_allclose(e.eigenvalues, [3, 1])
    np.testing.assert_allclose(np.abs(e.eigenvectors), [[0, 1], [1, 0]], atol=1e-15)


@pytest.mark.parametrize("n", [1, 2, 5, 8, 20])
def test_eigen_invariants(rng, n):
    B = rng.normal(size=(n, n))
    A = B + B.T
    e = sym_eigen(A)
    V, lam = e.eigenvectors, e.eigenvalues
    np.testing.assert_allclose(V @ np.diag(lam) @ V.T, A, atol=1e-9)
    np.testing.assert_allclose(V.T @ V, np.eye(n), atol=1e-9)
    assert np.all(np.diff(lam) <= 1e-12)
    np.testing.assert_allclose(lam, np.sort(np.linalg.eigvalsh(A))[::-1], atol=1e-9)


def test_eigen_is_deterministic(rng):
    B = rng.normal(size=(6, 6))
    A = B @ B.T
    a, b = sym_eigen(A), sym_eigen(A)
    np.testing.assert_array_equal(a.eigenvectors, b.eigenvectors)


def test_softmax_and_logsumexp():
    np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5])
    assert log_sum_exp([3.25]) == 3.25
    x = np.array([0.3, -1.0, 2.0])
    np.testing.assert_allclose(softmax(x + 7.0), softmax(x), atol=1e-12)
    assert log_sum_exp([1000.0, 1000.0]) == pytest.approx(1000.0 + np.log(2.0))
    assert log_sum_exp([-np.inf, 0.0]) == 0.0


def test_segment_softmax_matches_blockwise(rng):
    z = rng.normal(size=(4, 9))
    starts = np.array([0, 2, 6])
    out = segment_softmax(z, starts)
    for a, b in [(0, 2), (2, 6), (6, 9)]:
        np.testing.assert_allclose(out[:, a:b], softmax(z[:, a:b], axis=1), atol=1e-14)
