import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modev.errors import ConvergenceError
from modev.kernels import GaussianKernel, rademacher
from modev.model import AffineDrift, ModelSpec, get_model
from modev.ratefn import (ControlPath, constant, controllability_gramian, exit_rate, halfspace_rate, laplace_value,
                          legendre, linearize, terminal_linear, terminal_quadratic, terminal_rate,
                          terminal_threshold)
from modev.schedule import truncated_limit
from tests.oracles import qp_terminal_rate


def test_legendre_examples():
    assert legendre(GaussianKernel([[1.0]]), None, [1.0]) == pytest.approx(0.5)
    assert legendre(rademacher(1), None, [0.5]) == pytest.approx(0.130812, abs=1e-6)
    for name in ("gauss1", "rad1", "lap1", "degen2"):
        k = get_model(name).kernel
        assert legendre(k, None, np.zeros(k.dimension)) == 0.0


def test_gramian_examples():
    assert np.allclose(controllability_gramian(get_model("gauss1")), [[1.0]])
    assert controllability_gramian(get_model("ou1"))[0, 0] == pytest.approx((1 - math.exp(-2)) / 2, abs=1e-6)
    assert np.allclose(controllability_gramian(get_model("degen2")), np.diag([1.0, 0.0]))
    with pytest.raises(ValueError):
        controllability_gramian(get_model("gauss1"), m=5)


@pytest.mark.parametrize("name,y", [("gauss1", [1.0]), ("ou1", [1.0]), ("ou1", [-0.3]), ("dint2", [1.0, 0.0]),
                                    ("dint2", [0.2, -1.0]), ("degen2", [1.0, 0.0])])
def test_terminal_rate_matches_qp_oracle(name, y):
    spec = get_model(name)
    sol = terminal_rate(spec, y)
    B = spec.drift.jacobian(spec.x0)
    A = spec.kernel.covariance(spec.x0)
    assert sol.value == pytest.approx(qp_terminal_rate(B, A, y), rel=1e-4)
    assert sol.diagnostics["terminal_error"] < 1e-10
    assert sol.control.cost() == pytest.approx(sol.value, rel=1e-9)


def test_terminal_rate_examples():
    sol = terminal_rate(get_model("gauss1"), [1.0])
    assert sol.value == pytest.approx(0.5)
    assert np.allclose(sol.control.values, 1.0)
    assert terminal_rate(get_model("ou1"), [1.0]).value == pytest.approx(1.156518, abs=1e-4)
    off = terminal_rate(get_model("degen2"), [0.0, 1.0])
    assert math.isinf(off.value) and off.control is None
    doc = json.loads(off.to_json())
    assert doc["value"] is None and doc["infinite"]


def test_nonlinear_model_terminal_rate_against_qp_on_linearization():
    # tanh drift: X0 moves, so Db(X0(t)) varies in time; compare with a fine Gramian
    spec = get_model("tanh1")
    coarse = terminal_rate(spec, [1.0], m=500).value
    fine = terminal_rate(spec, [1.0], m=4000).value
    assert coarse == pytest.approx(fine, rel=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 4))
def test_rate_scaling(y, lam):
    spec = get_model("ou1")
    base = terminal_rate(spec, [y], m=200).value
    assert terminal_rate(spec, [lam * y], m=200).value == pytest.approx(lam * lam * base, rel=1e-9, abs=1e-14)


def test_halfspace_and_exit_rates():
    ou = get_model("ou1")
    G = controllability_gramian(ou)[0, 0]
    assert halfspace_rate(ou, [1.0], 1.0).value == pytest.approx(1 / (2 * G))
    assert halfspace_rate(ou, [1.0], -1.0).value == 0.0
    g = get_model("gauss1")
    # for b = 0 the largest Gramian is at t = 1, so the exit rate equals the terminal rate
    ex = exit_rate(g, 2.0)
    assert ex.value == pytest.approx(2.0)
    assert ex.trajectory.sup_norm() == pytest.approx(2.0, rel=1e-9)
    assert math.isinf(halfspace_rate(get_model("degen2"), [0.0, 1.0], 1.0).value)
    # OU: G(t) increasing, so the exit time is t = 1 too
    assert exit_rate(ou, 1.0).value == pytest.approx(1 / (2 * G))


def test_laplace_examples():
    g = get_model("gauss1")
    sol = laplace_value(g, constant(2.5))
    assert sol.value == pytest.approx(2.5)
    assert np.allclose(sol.control.values, 0.0)
    lin = laplace_value(g, terminal_linear([1.0]))
    assert lin.value == pytest.approx(-0.5, abs=1e-6)
    assert np.allclose(lin.control.values, -1.0, atol=1e-5)
    pen = laplace_value(g, terminal_quadratic([1.0], 50.0))
    assert pen.value == pytest.approx(0.5, rel=0.02)


def test_laplace_matches_qp_for_quadratic_penalty():
    # min_y 1/2 y^2/G + w (y - 1)^2 in closed form for the OU Gramian
    ou = get_model("ou1")
    G = controllability_gramian(ou)[0, 0]
    w = 3.0
    y = 2 * w / (1 / G + 2 * w)
    exact = 0.5 * y * y / G + w * (y - 1) ** 2
    assert laplace_value(ou, terminal_quadratic([1.0], w)).value == pytest.approx(exact, rel=1e-5)


def test_laplace_threshold_functional():
    g = get_model("gauss1")
    sol = laplace_value(g, terminal_threshold([1.0], 1.0, 200.0))
    # approaches the half-space rate 0.5 from below as the weight grows
    assert 0.49 < sol.value < 0.5


def test_laplace_reports_nonconvergence():
    with pytest.raises(ConvergenceError) as info:
        laplace_value(get_model("ou1"), terminal_quadratic([1.0], 5.0), max_iters=1)
    assert info.value.best is not None


def test_continuity_bound_random_controls():
    spec = get_model("tanh1")
    sys = linearize(spec, 400)
    Kb, KA = 1.0, 1.0
    rng = np.random.default_rng(0)
    for _ in range(10):
        u, v = rng.normal(size=(401, 1)), rng.normal(size=(401, 1))
        pu = sys.propagate(np.einsum("jab,jb->ja", sys.root, u))
        pv = sys.propagate(np.einsum("jab,jb->ja", sys.root, v))
        l2 = math.sqrt(ControlPath(u - v).cost() * 2)
        assert np.max(np.abs(pu - pv)) <= (1 + Kb * math.exp(Kb)) * math.sqrt(KA) * l2


def test_truncation_limits_monotone():
    spec = get_model("degen2")
    u = ControlPath.from_function(lambda s: [1.0, 0.0], 100)
    costs = [truncated_limit(spec, u, K, 100)[0] for K in (0.25, 0.5, 1.0, 2.0)]
    assert np.all(np.diff(costs) >= -1e-15)
    assert costs[-1] == pytest.approx(u.cost())
