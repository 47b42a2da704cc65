import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from owlkit.lbfgs import NonFiniteObjective, minimize_lbfgs


def rosenbrock(x):
    f = 100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2
    g = np.array([-400 * x[0] * (x[1] - x[0] ** 2) - 2 * (1 - x[0]), 200 * (x[1] - x[0] ** 2)])
    return f, g


def test_rosenbrock():
    res = minimize_lbfgs(rosenbrock, np.array([-1.2, 1.0]), gtol=1e-8, max_iter=500)
    assert res.converged
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-6)


@given(st.integers(0, 10_000), st.integers(2, 30))
def test_quadratic_matches_linear_solve(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    A = A @ A.T / n + np.eye(n)
    b = rng.normal(size=n)
    res = minimize_lbfgs(lambda x: (0.5 * x @ A @ x - b @ x, A @ x - b), np.zeros(n), gtol=1e-10)
    assert res.converged
    assert np.allclose(res.x, np.linalg.solve(A, b), atol=1e-8)


def test_monotone_from_start_and_stationary_start():
    A = np.diag([1.0, 10.0, 100.0])
    fg = lambda x: (0.5 * x @ A @ x, A @ x)
    x0 = np.ones(3)
    res = minimize_lbfgs(fg, x0, gtol=1e-9)
    assert res.fun <= fg(x0)[0]
    again = minimize_lbfgs(fg, res.x, gtol=1e-9)
    assert again.n_iter == 0 and again.fun == res.fun


def test_max_iter_reported():
    res = minimize_lbfgs(rosenbrock, np.array([-1.2, 1.0]), max_iter=3)
    assert not res.converged and res.n_iter == 3


def test_non_finite_start_raises():
    with pytest.raises(NonFiniteObjective):
        minimize_lbfgs(lambda x: (np.nan, x), np.zeros(2))
