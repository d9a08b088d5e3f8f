import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boxqp import BoxQPError, solve_box_qp


def _brute_force(hessian, gradient, lower, upper):
    """Exact minimizer by enumerating which bound (if any) each coordinate sits on."""
    n = gradient.size
    best_x, best_value = None, np.inf
    for pattern in itertools.product((None, "lower", "upper"), repeat=n):
        x = np.zeros(n)
        free = np.array([p is None for p in pattern])
        for i, p in enumerate(pattern):
            if p == "lower":
                x[i] = lower[i]
            elif p == "upper":
                x[i] = upper[i]
        if free.any():
            rhs = gradient[free] + hessian[np.ix_(free, ~free)] @ x[~free]
            x[free] = np.linalg.solve(hessian[np.ix_(free, free)], -rhs)
        if np.any(x < lower - 1e-12) or np.any(x > upper + 1e-12):
            continue
        value = x @ gradient + 0.5 * x @ hessian @ x
        if value < best_value:
            best_x, best_value = x, value
    return best_x, best_value


def test_one_dimensional_clamp():
    result = solve_box_qp(np.array([[1.0]]), np.array([3.0]), np.array([-1.0]), np.array([1.0]))
    np.testing.assert_allclose(result.x, [-1.0])
    assert not result.free[0]
    assert result.free_factor is None


def test_unconstrained_solution():
    hessian = np.array([[4.0, 1.0], [1.0, 3.0]])
    gradient = np.array([1.0, -2.0])
    result = solve_box_qp(hessian, gradient, np.full(2, -np.inf), np.full(2, np.inf))
    np.testing.assert_allclose(result.x, np.linalg.solve(hessian, -gradient), atol=1e-10)
    assert result.free.all()
    np.testing.assert_allclose(result.free_solve(np.array([1.0, 0.0])), np.linalg.solve(hessian, [1.0, 0.0]))


def test_random_instances_match_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = rng.normal(size=(3, 3))
        hessian = a @ a.T + 0.1 * np.eye(3)
        gradient = rng.normal(scale=3.0, size=3)
        lower = -rng.uniform(0.1, 2.0, 3)
        upper = rng.uniform(0.1, 2.0, 3)
        expected, value = _brute_force(hessian, gradient, lower, upper)
        result = solve_box_qp(hessian, gradient, lower, upper, max_iterations=100, tolerance=1e-12)
        got = result.x @ gradient + 0.5 * result.x @ hessian @ result.x
        assert got == pytest.approx(value, abs=1e-10)
        np.testing.assert_array_equal(result.free, np.array([lower[i] < expected[i] < upper[i] for i in range(3)]))
        np.testing.assert_allclose(result.x, expected, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-5.0, 5.0), min_size=2, max_size=2),
    st.floats(0.1, 3.0),
)
def test_solution_stays_in_the_box(gradient, width):
    hessian = np.array([[2.0, 0.5], [0.5, 1.0]])
    lower, upper = np.full(2, -width), np.full(2, width)
    result = solve_box_qp(hessian, np.array(gradient), lower, upper)
    assert np.all(result.x >= lower) and np.all(result.x <= upper)


def test_indefinite_free_block():
    with pytest.raises(BoxQPError):
        solve_box_qp(np.array([[-1.0, 0.0], [0.0, 1.0]]), np.zeros(2), np.full(2, -1.0), np.full(2, 1.0))


def test_inverted_bounds():
    with pytest.raises(ValueError):
        solve_box_qp(np.eye(2), np.zeros(2), np.array([1.0, 0.0]), np.array([0.0, 1.0]))


def test_equal_bounds_pin_the_variable():
    result = solve_box_qp(np.eye(2), np.array([1.0, 1.0]), np.array([0.5, -np.inf]), np.array([0.5, np.inf]))
    np.testing.assert_allclose(result.x, [0.5, -1.0], atol=1e-10)
