import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modev.dynamics import (GridPath, default_lln_grid, interpolate, lln_limit, noiseless_path,
                            transition_matrix)
from modev.kernels import GaussianKernel
from modev.model import AffineDrift, Drift, ModelSpec, get_model


def _spec(B, x0, c=None):
    B = np.atleast_2d(B)
    return ModelSpec(B.shape[0], x0, AffineDrift(B, c), GaussianKernel(np.eye(B.shape[0])))


def test_noiseless_path_examples():
    assert np.allclose(noiseless_path(_spec(0.0, [2.0]), 10).values, 2.0)
    assert noiseless_path(_spec(-1.0, [1.0]), 1).values[-1, 0] == 0.0
    assert abs(noiseless_path(_spec(-1.0, [1.0]), 10_000).values[-1, 0] - math.exp(-1)) < 1e-3


def test_noiseless_path_reports_step_of_blowup():
    spec = ModelSpec(1, [1.0], Drift(lambda x: np.where(x > 1.5, np.inf, 1.0 + 0 * x)), GaussianKernel([[1.0]]))
    with pytest.raises(Exception, match="step"):
        noiseless_path(spec, 4)


def test_lln_limit_examples():
    assert np.allclose(lln_limit(_spec(0.0, [3.0]), 20).values, 3.0)
    p = lln_limit(_spec(0.0, [0.0], c=[1.0]), 50)
    assert np.allclose(p.values[:, 0], p.times)
    assert abs(lln_limit(_spec(-1.0, [1.0]), 100).values[-1, 0] - math.exp(-1)) < 1e-8


def test_interpolation_examples():
    p = GridPath(np.array([[0.0], [1.0], [0.0]]))
    assert interpolate(p, 0.25)[0] == pytest.approx(0.5)
    assert interpolate(p, 0.5)[0] == 1.0
    with pytest.raises(ValueError):
        interpolate(p, 1.5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=5, max_size=5), st.lists(st.floats(-5, 5), min_size=5, max_size=5),
       st.floats(0, 1), st.floats(0, 1))
def test_interpolation_is_linear_in_the_path(a, b, lam, t):
    P, Q = GridPath(np.array(a)), GridPath(np.array(b))
    mix = GridPath(lam * np.array(a) + (1 - lam) * np.array(b))
    assert np.allclose(mix(t), lam * P(t) + (1 - lam) * Q(t), atol=1e-12)


def test_transition_matrix_examples():
    zero = _spec(np.zeros((2, 2)), [0.0, 0.0])
    assert np.allclose(transition_matrix(zero, lln_limit(zero, 100), 0.0, 1.0), np.eye(2))
    ou = get_model("ou1")
    path = lln_limit(ou, 100)
    assert abs(transition_matrix(ou, path, 0.0, 1.0)[0, 0] - math.exp(-1)) < 1e-8
    with pytest.raises(ValueError):
        transition_matrix(ou, path, 0.7, 0.2)


def test_transition_semigroup_nonlinear():
    spec = get_model("tanh1")
    path = lln_limit(spec, 200)
    full = transition_matrix(spec, path, 0.0, 1.0)
    split = transition_matrix(spec, path, 0.5, 1.0) @ transition_matrix(spec, path, 0.0, 0.5)
    assert np.linalg.norm(split - full) <= 1e-8
    # off-grid start and grid refinement
    p2 = lln_limit(spec, 400)
    assert np.linalg.norm(transition_matrix(spec, p2, 0.0, 1.0) - full) <= 1e-8
    assert transition_matrix(spec, path, 0.123, 0.777).shape == (1, 1)


def test_euler_error_is_first_order():
    spec = get_model("tanh1")
    ref = lln_limit(spec, 20_000)
    scaled = []
    for n in (100, 1000, 10_000):
        p = noiseless_path(spec, n)
        err = np.max(np.abs(p.values - ref(p.times)))
        scaled.append(err * n)
    assert max(scaled) < 1.0 and max(scaled) / min(scaled) < 2.0


def test_csv_and_default_grid():
    text = GridPath(np.array([[0.0, 1.0], [0.5, 2.0]])).to_csv()
    assert text.splitlines()[0] == "t,v0,v1"
    assert default_lln_grid(16384) == 163840
    assert default_lln_grid(256) == 2560
    assert default_lln_grid(10) == 1000
    assert default_lln_grid(300) == 3000 and default_lln_grid(7) == 1001
