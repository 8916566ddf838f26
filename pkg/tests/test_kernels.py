import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from modev.errors import DomainError, ModelError, UnsupportedTiltError
from modev.importance import sample_tilted
from modev.kernels import (Component, CustomKernel, DiscreteFiniteKernel, GaussianKernel, ProductKernel,
                           degenerate_product, kernel_from_dict, laplace, point_mass, rademacher)
from modev.rng import CounterStream


def test_gaussian_closed_forms():
    C = np.array([[2.0, 0.5], [0.5, 1.0]])
    k = GaussianKernel(C)
    a = np.array([0.3, -0.7])
    assert k.log_mgf(None, a) == pytest.approx(0.5 * a @ C @ a)
    assert np.allclose(k.tilt_mean(None, a), C @ a)
    val, flag = k.legendre(None, C @ a)
    assert val == pytest.approx(0.5 * a @ C @ a) and not flag


def test_rademacher_closed_forms():
    k = rademacher(1)
    assert float(k.log_mgf(None, [1.0])) == pytest.approx(math.log(math.cosh(1.0)))
    assert float(k.tilt_mean(None, [1.0])[0]) == pytest.approx(0.761594, abs=1e-6)
    assert math.isinf(k.legendre(None, [1.5])[0])


def test_laplace_domain_and_transform():
    k = laplace(1, 1.0)
    assert k.mgf_radius == 1.0
    assert math.isinf(float(k.log_mgf(None, [1.0])))
    with pytest.raises(DomainError):
        k.tilt_mean(None, [1.2])
    # conjugate check against a dense grid
    beta = 0.8
    grid = np.linspace(-0.999, 0.999, 200001)
    brute = np.max(grid * beta + np.log1p(-grid**2))
    assert k.legendre(None, [beta])[0] == pytest.approx(brute, abs=1e-8)


def test_discrete_kernel_requires_centering():
    with pytest.raises(ModelError):
        DiscreteFiniteKernel([[0.0], [1.0]], [0.5, 0.5])


def test_discrete_legendre_matches_brute_force():
    k = DiscreteFiniteKernel([[-1.0], [0.0], [2.0]], [0.4, 0.4, 0.2])
    beta = 0.5
    grid = np.linspace(-10, 10, 400001)
    brute = np.max(grid * beta - k.log_mgf(None, grid[:, None]))
    assert k.legendre(None, [beta])[0] == pytest.approx(brute, abs=1e-7)
    assert math.isinf(k.legendre(None, [2.5])[0])


def test_point_mass_is_degenerate():
    k = point_mass(2)
    assert np.allclose(k.covariance(), 0.0)
    assert k.legendre(None, [0.0, 0.0])[0] == 0.0
    assert math.isinf(k.legendre(None, [0.1, 0.0])[0])


def test_tilted_gaussian_mean():
    k = GaussianKernel(np.eye(2))
    y = sample_tilted(k, None, [1.0, 0.0], CounterStream(1), 100_000)
    assert np.all(np.abs(y.mean(axis=0) - [1.0, 0.0]) < 3 / math.sqrt(1e5))


def test_tilted_rademacher_frequency():
    p = math.e / (math.e + 1 / math.e)
    y = sample_tilted(rademacher(1), None, [1.0], CounterStream(2), 100_000)
    freq = np.mean(y[:, 0] > 0)
    assert abs(freq - p) < 3 * math.sqrt(p * (1 - p) / 1e5)
    assert p == pytest.approx(0.880797, abs=1e-6)


def test_zero_tilt_matches_untilted_law():
    k = laplace(1, 1.0)
    y = k.sampler(None, CounterStream(3), 20_000)[:, 0]
    assert stats.kstest(y, stats.laplace.cdf).pvalue > 0.001
    yt = sample_tilted(k, None, [0.0], CounterStream(4), 20_000)[:, 0]
    assert stats.ks_2samp(y, yt).pvalue > 0.001


def test_tilted_laplace_mean():
    k = laplace(1, 1.0)
    y = sample_tilted(k, None, [0.4], CounterStream(5), 200_000)[:, 0]
    mean = float(k.tilt_mean(None, [0.4])[0])
    sd = math.sqrt(np.var(y) / y.size)
    assert abs(y.mean() - mean) < 4 * sd


def test_discrete_tilted_draws():
    k = DiscreteFiniteKernel([[-1.0], [0.0], [2.0]], [0.4, 0.4, 0.2])
    p = k.tilted_probs([0.7])
    y = sample_tilted(k, None, [0.7], CounterStream(6), 50_000)[:, 0]
    for atom, q in zip([-1.0, 0.0, 2.0], p):
        f = np.mean(y == atom)
        assert abs(f - q) < 4 * math.sqrt(q * (1 - q) / y.size)


def test_custom_kernel_rejection_sampling():
    # symmetric +-1 as a custom kernel, tilted by rejection with bound |alpha|
    k = CustomKernel(
        1,
        log_mgf=lambda x, a: np.log(np.cosh(a[..., 0])),
        sample=lambda x, u: np.where(u[..., :1] < 0.5, 1.0, -1.0),
        n_uniforms=2,
        tilt_bound=lambda a: np.abs(a[..., 0]),
        covariance=lambda x: np.eye(1),
    )
    y = sample_tilted(k, None, [0.5], CounterStream(7), 50_000)[:, 0]
    p = math.exp(0.5) / (2 * math.cosh(0.5))
    assert abs(np.mean(y > 0) - p) < 4 * math.sqrt(p * (1 - p) / y.size)
    assert float(k.tilt_mean(None, [0.5])[0]) == pytest.approx(math.tanh(0.5), abs=1e-8)


def test_custom_kernel_without_tilt_support():
    k = CustomKernel(1, log_mgf=lambda x, a: 0.5 * a[..., 0] ** 2,
                     sample=lambda x, u: np.zeros(u.shape[:-1] + (1,)), n_uniforms=2)
    with pytest.raises(UnsupportedTiltError):
        sample_tilted(k, None, [0.5], CounterStream(8), 10)


def test_custom_kernel_monte_carlo_covariance():
    from modev.kernels import box_muller

    k = CustomKernel(1, log_mgf=lambda x, a: 0.5 * a[..., 0] ** 2,
                     sample=lambda x, u: box_muller(u, 1), n_uniforms=2)
    C = k.covariance(None)
    assert abs(C[0, 0] - 1.0) < 5 * k.covariance_stderr[0, 0]


def test_kernel_from_dict_round_trip():
    for k in (rademacher(2), laplace(1, 2.0), degenerate_product([("rademacher", 1.0), ("point", 0.0)]),
              GaussianKernel(np.eye(2)), DiscreteFiniteKernel([[-1.0], [1.0]], [0.5, 0.5])):
        doc = k.to_dict()
        doc.setdefault("dimension", k.dimension)
        k2 = kernel_from_dict(doc)
        a = np.full(k.dimension, 0.3)
        assert np.allclose(k.log_mgf(None, a), k2.log_mgf(None, a))
    with pytest.raises(ModelError):
        kernel_from_dict({"name": "cauchy"})


def test_component_validation():
    with pytest.raises(ValueError):
        Component("cauchy", 1.0)
    with pytest.raises(ValueError):
        ProductKernel([Component("gaussian", -1.0)])


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(0.2, 3))
def test_relative_entropy_equals_legendre_for_exponential_tilts(alpha, scale):
    for k in (rademacher(1, scale), GaussianKernel([[scale]])):
        R = float(k.relative_entropy(None, [alpha]))
        L = k.legendre(None, k.tilt_mean(None, [alpha]))[0]
        assert R == pytest.approx(L, abs=1e-6)
        assert R >= -1e-12
