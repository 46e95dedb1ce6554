import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pivpricing.optimize import nelder_mead


def rosenbrock(x):
    return (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2


def test_quadratic_1d():
    x, f, ok = nelder_mead(lambda x: (x[0] - 3.0) ** 2, [0.0])
    assert ok and abs(x[0] - 3.0) < 1e-6


def test_bowl_2d():
    res = nelder_mead(lambda x: x[0] ** 2 + x[1] ** 2, [1.0, 1.0])
    assert res.converged and res.fun < 1e-10


def test_rosenbrock():
    res = nelder_mead(rosenbrock, [-1.2, 1.0], max_iter=2000)
    assert res.fun < 1e-6 and res.n_iter <= 2000
    np.testing.assert_allclose(res.x, [1, 1], atol=1e-3)


def test_history_monotone_and_deterministic():
    a = nelder_mead(rosenbrock, [-1.2, 1.0])
    b = nelder_mead(rosenbrock, [-1.2, 1.0])
    assert np.all(np.diff(a.history) <= 0)
    assert np.array_equal(a.x, b.x) and a.history == b.history


def test_max_iter_exhaustion():
    res = nelder_mead(rosenbrock, [-1.2, 1.0], max_iter=5)
    assert not res.converged and res.n_iter == 5


def test_non_finite_is_infinite():
    # the objective is undefined left of 0.5; the simplex must stay on the finite side
    f = lambda x: math.nan if x[0] < 0.5 else (x[0] - 1) ** 2
    res = nelder_mead(f, [2.0], step=[1.0])
    assert res.converged and abs(res.x[0] - 1) < 1e-6


def test_non_finite_start_rejected():
    with pytest.raises(ValueError):
        nelder_mead(lambda x: math.inf, [0.0])


def test_initial_simplex():
    res = nelder_mead(lambda x: (x[0] - 2) ** 2 + (x[1] + 1) ** 2, [0, 0], initial_simplex=[[0, 0], [1, 0], [0, 1]])
    np.testing.assert_allclose(res.x, [2, -1], atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(c=st.lists(st.floats(-5, 5), min_size=1, max_size=4))
def test_separable_quadratic(c):
    c = np.array(c)
    res = nelder_mead(lambda x: float(np.sum((x - c) ** 2)), np.zeros_like(c), max_iter=5000, step=1.0)
    assert res.converged
    np.testing.assert_allclose(res.x, c, atol=1e-5)
