import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modev.errors import DomainError, ModelError
from modev.kernels import GaussianKernel, degenerate_product, laplace, rademacher
from modev.model import (CATALOG, AffineDrift, Bounds, Drift, ModelSpec, covariance, get_model, log_mgf,
                         model_from_dict, tilt_mean, validate_model)


def test_scaling_sequence():
    spec = get_model("gauss1")
    assert spec.a(16) == pytest.approx(0.5)
    assert spec.amplification(16) == pytest.approx(2.0)
    with pytest.raises(ModelError):
        get_model("gauss1", gamma=0.5)


def test_log_mgf_values():
    assert log_mgf(GaussianKernel(np.eye(2)), None, [1.0, 0.0]) == pytest.approx(0.5)
    assert log_mgf(rademacher(1), None, [1.0]) == pytest.approx(0.433781, abs=1e-6)
    for k in (GaussianKernel(np.eye(2)), rademacher(2), laplace(2)):
        assert log_mgf(k, None, np.zeros(2)) == 0.0


def test_tilt_mean_values():
    assert np.allclose(tilt_mean(GaussianKernel(np.eye(2)), None, [0.3, -0.2]), [0.3, -0.2])
    assert tilt_mean(rademacher(1), None, [1.0])[0] == pytest.approx(0.761594, abs=1e-6)
    with pytest.raises(DomainError):
        tilt_mean(laplace(1), None, [1.5])


def test_covariance_values():
    assert np.allclose(covariance(GaussianKernel(np.eye(2))), np.eye(2))
    assert np.allclose(covariance(degenerate_product([("rademacher", 1.0), ("point", 0.0)])), np.diag([1.0, 0.0]))
    assert np.allclose(covariance(rademacher(1)), [[1.0]])


def test_validate_gaussian_passes():
    rep = validate_model(get_model("gauss1"))
    assert rep.passed and rep.partial
    assert rep.clause("mgf_bound").measured == pytest.approx(0.5)
    assert rep.clause("third_derivative").verdict == "unverified"


def test_validate_rademacher():
    rep = validate_model(get_model("rad1"))
    assert rep.passed
    assert rep.clause("mgf_bound").measured == pytest.approx(0.433781, abs=1e-6)


def test_validate_flags_unbounded_jacobian():
    spec = ModelSpec(1, [0.0], Drift(lambda x: x**2, lambda x: np.diag(2 * np.atleast_1d(x))),
                     GaussianKernel([[1.0]]), bounds=Bounds(K_b=5.0, K_A=1.0, K_mgf=0.5, lam=1.0))
    rep = validate_model(spec, box=(-10.0, 10.0))
    assert rep.clause("jacobian_bound").verdict == "fail"
    assert not rep.passed


def test_validate_flags_wrong_jacobian():
    spec = ModelSpec(1, [0.0], Drift(lambda x: np.sin(x), lambda x: np.eye(1)), GaussianKernel([[1.0]]))
    assert validate_model(spec).clause("jacobian_consistency").verdict == "fail"


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_validate_nonfinite_names_point():
    spec = ModelSpec(1, [0.0], Drift(lambda x: 1.0 / (x - 3.0)), GaussianKernel([[1.0]]))
    with pytest.raises(ModelError, match="x="):
        validate_model(spec, box=(3.0, 3.0), probe_count=2)


def test_undeclared_bounds_are_unverified():
    rep = validate_model(get_model("ou1"))
    assert rep.clause("drift_bound").verdict == "unverified"
    json.dumps(rep.to_dict())


def test_fd_jacobian_fallback():
    d = Drift(lambda x: np.array([np.sin(x[..., 0]) * x[..., 1], x[..., 0] ** 2]).T)
    x = np.array([0.3, -1.2])
    J = d.jacobian(x)
    exact = np.array([[np.cos(0.3) * -1.2, np.sin(0.3)], [0.6, 0.0]])
    assert np.allclose(J, exact, atol=1e-8)


def test_model_json_round_trip(tmp_path):
    for name in CATALOG:
        spec = get_model(name)
        doc = spec.to_dict()
        spec2 = model_from_dict(doc)
        assert np.allclose(spec2.drift(spec.x0 + 0.3), spec.drift(spec.x0 + 0.3))
        assert np.allclose(covariance(spec2.kernel), covariance(spec.kernel))
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"dimension": 1, "kernel": {"name": "gaussian"}, "drift": {"name": "linear", "rate": -2.0}}))
    spec = get_model(str(p), gamma=0.2)
    assert spec.gamma == 0.2 and spec.drift(np.array([1.0]))[0] == -2.0


def test_unknown_model_keys_rejected():
    with pytest.raises(ModelError):
        model_from_dict({"dimension": 1, "kernel": {"name": "gaussian"}, "gama": 0.2})


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["gauss1", "rad1", "lap1", "degen2", "dint2"]), st.integers(0, 10_000))
def test_hessian_at_zero_matches_covariance(name, seed):
    kern = get_model(name).kernel
    d = kern.dimension
    h = 1e-4
    H = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            ei, ej = np.eye(d)[i] * h, np.eye(d)[j] * h
            H[i, j] = (log_mgf(kern, None, ei + ej) - log_mgf(kern, None, ei - ej)
                       - log_mgf(kern, None, ej - ei) + log_mgf(kern, None, -ei - ej)) / (4 * h * h)
    assert np.allclose(H, covariance(kern), rtol=1e-4, atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["gauss1", "rad1", "lap1", "degen2", "dint2"]),
       st.lists(st.floats(-0.6, 0.6), min_size=2, max_size=2))
def test_fenchel_equality(name, a):
    from modev.ratefn import legendre

    kern = get_model(name).kernel
    alpha = np.array(a[: kern.dimension])
    m = tilt_mean(kern, None, alpha)
    lhs = legendre(kern, None, m) + log_mgf(kern, None, alpha)
    # only the coordinates that carry noise contribute to <alpha, m>
    assert lhs == pytest.approx(float(alpha @ m), abs=1e-6)
