import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modev.errors import ConfigError, DomainError
from modev.importance import (HalfspaceEvent, ISEstimate, PathEvent, SupNormEvent, WholeSpace, is_laplace,
                              is_probability, log_likelihood_ratio, parse_event, terminal_event,
                              vanilla_probability)
from modev.kernels import DiscreteFiniteKernel, GaussianKernel
from modev.model import AffineDrift, ModelSpec, get_model
from modev.ratefn import ControlPath, constant, terminal_linear, terminal_quadratic
from modev.schedule import (ControlSchedule, clip_control, default_K, min_admissible_n,
                            tilt_schedule_from_control)
from modev.simulate import replay, simulate_controlled
from tests.oracles import gaussian_kl, gaussian_tail, rademacher_enumeration, tilted_rademacher_prob


def _const(values, m=50):
    return ControlPath.from_function(lambda s: list(values), m)


# --- schedules ---------------------------------------------------------------------

def test_clip_control():
    u = np.array([[3.0, 4.0], [0.3, 0.4], [0.0, 0.0]])
    out = clip_control(u, 1.0)
    assert np.allclose(out, [[0.6, 0.8], [0.3, 0.4], [0.0, 0.0]])


def test_schedule_identity_covariance():
    spec = get_model("gauss1")
    n = 100
    u = ControlPath.from_function(lambda s: [np.sin(5 * s)], 1000)
    sched = tilt_schedule_from_control(spec, u, 2.0, n)
    assert np.allclose(sched.alphas[:, 0], np.sin(5 * np.arange(n) / n) / spec.amplification(n), atol=1e-12)
    assert sched.mode == "frozen" and sched.dimension == 1


def test_schedule_radial_clip():
    spec = get_model("gauss1")
    n, K = 64, 1.5
    sched = tilt_schedule_from_control(spec, _const([2 * K]), K, n)
    assert np.allclose(sched.alphas, K / spec.amplification(n))


def test_schedule_degenerate_direction_capped():
    spec = get_model("degen2")
    n = 4096
    sched = tilt_schedule_from_control(spec, _const([0.0, 1.0]), 3.0, n)
    assert np.allclose(sched.alphas, np.array([0.0, 3.0]) / spec.amplification(n))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 5.0), st.integers(1, 5000))
def test_tilt_norm_bound(K, n):
    spec = get_model("degen2")
    u = ControlPath.from_function(lambda s: [4 * np.cos(7 * s), -6 * s], 200)
    sched = tilt_schedule_from_control(spec, u, K, n)
    assert np.all(np.linalg.norm(sched.alphas, axis=1) <= K * K / spec.amplification(n) * (1 + 1e-12))


def test_schedule_reports_min_admissible_n():
    spec = get_model("lap1")
    K = 5.0
    with pytest.raises(DomainError) as info:
        tilt_schedule_from_control(spec, _const([1.0]), K, 100)
    need = info.value.min_n
    assert need == min_admissible_n(spec, K)
    assert K * K / spec.amplification(need) < 1.0 <= K * K / spec.amplification(need - 1)
    tilt_schedule_from_control(spec, _const([1.0]), K, need)


def test_schedule_rejects_bad_arguments():
    spec = get_model("gauss1")
    with pytest.raises(ValueError):
        tilt_schedule_from_control(spec, _const([1.0]), 0.0, 10)
    with pytest.raises(ValueError):
        tilt_schedule_from_control(spec, _const([1.0]), 1.0, 0)


def test_default_K_and_fingerprint():
    assert default_K(_const([-0.4])) == pytest.approx(4.0)
    assert default_K(_const([0.0])) == 1.0
    spec = get_model("gauss1")
    s1 = tilt_schedule_from_control(spec, _const([1.0]), 10.0, 32)
    s2 = tilt_schedule_from_control(spec, _const([1.0]), 10.0, 32)
    assert s1.fingerprint(3) == s2.fingerprint(3) != s1.fingerprint(4)
    assert len(s1.fingerprint(3)) == 16


def test_feedback_schedule_matches_frozen_for_constant_covariance():
    spec = get_model("ou1")
    n = 50
    u = _const([0.7])
    frozen = tilt_schedule_from_control(spec, u, 10.0, n)
    fb = tilt_schedule_from_control(spec, u, 10.0, n, feedback=True)
    assert fb.mode == "feedback"
    a = simulate_controlled(spec, frozen, n, seed=2)
    b = simulate_controlled(spec, fb, n, seed=2)
    assert np.allclose(a.ybar, b.ybar, atol=1e-14)


# --- likelihood ratios -----------------------------------------------------------

def test_loglr_single_gaussian_step():
    spec = get_model("gauss1")
    traj = replay(spec, ControlSchedule.constant(spec, 1, [1.0]), [[1.0]])
    assert log_likelihood_ratio(traj) == pytest.approx(-0.5)
    zero = replay(spec, ControlSchedule.zero(spec, 3), np.ones((3, 1)))
    assert log_likelihood_ratio(zero) == 0.0


SCHEDULES = {
    "constant": np.full((4, 1), 0.3),
    "ramp": np.array([[-0.5], [0.0], [0.4], [1.1]]),
    "alternating": np.array([[0.8], [-0.8], [0.8], [-0.8]]),
}


@pytest.mark.parametrize("name", sorted(SCHEDULES))
def test_enumeration_weights_sum_to_one(name):
    spec = get_model("rad1")
    sched = ControlSchedule.constant(spec, 4, [0.0])
    sched.alphas = SCHEDULES[name]
    total = 0.0
    hit = 0.0
    for signs in rademacher_enumeration(4):
        tr = replay(spec, sched, signs)
        q = tilted_rademacher_prob(signs, sched.alphas)
        w = math.exp(log_likelihood_ratio(tr))
        total += q * w
        # the weighted Q-probability of an event is its P-probability
        hit += q * w * (tr.ybar[-1, 0] >= 0.5 * spec.a(4))
        assert q * w == pytest.approx(1 / 16, rel=1e-12)
    assert total == pytest.approx(1.0, rel=1e-12)
    assert hit == pytest.approx(np.mean([s.sum() >= 1 for s in rademacher_enumeration(4)]), rel=1e-12)


# --- estimators --------------------------------------------------------------------

@pytest.mark.parametrize("name", ["gauss1", "rad1", "lap1", "dint2", "tanh1"])
def test_weight_normalization(name):
    spec = get_model(name)
    n, N = 256, 20_000
    u = ControlPath.from_function(lambda s: [0.8 * np.cos(4 * s)] * spec.dimension, 200)
    est = is_probability(spec, WholeSpace(), u, 1.5, n, N, seed=1)
    assert abs(est.estimate - 1.0) <= 3 * est.stderr
    assert abs(est.mean_weight - 1.0) <= 3 * est.weight_stderr
    assert est.ess <= N


def test_gaussian_tail_single_run():
    spec = get_model("gauss1")
    n = 1024
    est = is_probability(spec, terminal_event(1.0), None, None, n, 10_000, seed=7)
    truth = gaussian_tail(n, 0.25, 1.0)
    assert abs(est.estimate - truth) <= 3 * est.stderr
    assert est.ci_halfwidth == pytest.approx(1.96 * est.stderr)
    with pytest.warns(RuntimeWarning, match="degenerate"):
        van = vanilla_probability(spec, terminal_event(1.0), n, 10_000, seed=7)
    assert van.estimate == 0.0 or van.rel_error > est.rel_error


def test_sup_norm_event_estimate():
    spec = get_model("gauss1")
    n = 256
    est = is_probability(spec, SupNormEvent(1.0), None, None, n, 20_000, seed=3)
    # the terminal event is contained in the exit event; the reflection principle doubles it
    lo = gaussian_tail(n, 0.25, 1.0)
    assert lo - 3 * est.stderr <= est.estimate <= 2 * lo + 3 * est.stderr


def test_path_event_matches_summary_event():
    spec = get_model("ou1")
    n = 64
    ev1 = terminal_event(0.5)
    ev2 = PathEvent(lambda p: p.values[-1, 0] >= 0.5)
    a = is_probability(spec, ev1, None, None, n, 2000, seed=1)
    b = is_probability(spec, ev2, ev1.rate(spec).control, None, n, 2000, seed=1)
    assert a.estimate == pytest.approx(b.estimate, rel=1e-12)


def test_degenerate_estimate_warns():
    spec = get_model("rad1")
    n = 16
    with pytest.warns(RuntimeWarning, match="degenerate"):
        est = vanilla_probability(spec, terminal_event(100.0), n, 100, seed=0)
    assert est.estimate == 0.0 and est.degenerate
    doc = json.loads(est.to_json())
    assert doc["rel_error"] is None and doc["degenerate"]


def test_estimate_requires_two_replications():
    with pytest.raises(ValueError):
        is_probability(get_model("gauss1"), WholeSpace(), None, None, 4, 1, seed=0)


def test_isestimate_json_fields():
    spec = get_model("gauss1")
    est = is_probability(spec, terminal_event(0.5), None, None, 64, 500, seed=11)
    doc = json.loads(est.to_json())
    for key in ("estimate", "variance", "ci_halfwidth", "rel_error", "ess", "N", "n", "seed", "fingerprint"):
        assert key in doc
    assert doc["fingerprint"] == tilt_schedule_from_control(
        spec, terminal_event(0.5).rate(spec).control, default_K(terminal_event(0.5).rate(spec).control),
        64).fingerprint(11)
    lo, hi = est.ci
    assert est.covers(est.estimate) and hi - lo == pytest.approx(2 * est.ci_halfwidth)


def test_laplace_constant_functional():
    spec = get_model("rad1")
    est = is_laplace(spec, constant(1.75), _const([0.5]), None, 64, 100, seed=0)
    # e^{-c/a^2} times the weighted mean; the weights average to about one
    spec0 = ControlSchedule.zero(spec, 64)
    exact = is_laplace(spec, constant(1.75), None, None, 64, 100, seed=0, schedule=spec0)
    assert exact.estimate == pytest.approx(1.75, rel=1e-12)
    assert abs(est.estimate - 1.75) <= 3 * est.stderr + 1e-12


def test_laplace_linear_functional_has_zero_variance():
    spec = get_model("gauss1")
    for n in (64, 1024):
        est = is_laplace(spec, terminal_linear([1.0]), None, None, n, 1000, seed=n)
        assert est.estimate == pytest.approx(-0.5, abs=1e-10)
        assert est.stderr <= 1e-10
        assert est.approximate_ci and est.kind == "laplace"


def test_laplace_quadratic_penalty_is_finite():
    spec = get_model("ou1")
    est = is_laplace(spec, terminal_quadratic([1.0], 2.0), None, None, 1024, 4000, seed=2)
    assert math.isfinite(est.estimate) and est.stderr < 0.05


# --- events ------------------------------------------------------------------------

def test_parse_event():
    assert isinstance(parse_event("terminal>=1.5"), HalfspaceEvent)
    le = parse_event("terminal <= -2")
    assert np.allclose(le.v, [-1.0]) and le.c == 2.0
    hs = parse_event("halfspace 1,-1,0.5", d=2)
    assert np.allclose(hs.v, [1, -1]) and hs.c == 0.5
    assert parse_event("supnorm>=2").c == 2.0
    for bad in ("terminal>1", "halfspace 1,2", "banana", "halfspace a,b,c"):
        with pytest.raises(ConfigError):
            parse_event(bad, d=2)


# --- relative entropy versus Legendre transform ------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=2))
def test_exponential_tilts_attain_legendre(alpha):
    k = DiscreteFiniteKernel([[1.0, 0.0], [-1.0, 1.0], [0.0, -1.0]], [1 / 3, 1 / 3, 1 / 3])
    R = float(k.relative_entropy(None, alpha))
    L, _ = k.legendre(None, k.tilt_mean(None, alpha))
    assert R >= L - 1e-9
    assert R == pytest.approx(L, abs=1e-7)


def test_non_exponential_laws_exceed_legendre():
    rng = np.random.default_rng(1)
    C = np.array([[1.0, 0.3], [0.3, 0.5]])
    g = GaussianKernel(C)
    for _ in range(20):
        m = rng.normal(size=2)
        L = rng.normal(size=(2, 2))
        S = L @ L.T + 0.1 * np.eye(2)
        assert gaussian_kl(m, S, C) >= g.legendre(None, m)[0] - 1e-9
    atoms = np.array([[-1.0], [0.0], [2.0]])
    k = DiscreteFiniteKernel(atoms, [0.4, 0.4, 0.2])
    p = np.array([0.4, 0.4, 0.2])
    for _ in range(20):
        q = rng.dirichlet(np.ones(3))
        kl = float(np.sum(q * np.log(q / p)))
        assert kl >= k.legendre(None, q @ atoms)[0] - 1e-9


def test_custom_model_estimate_runs():
    spec = ModelSpec(1, [0.0], AffineDrift([[-0.3]]), GaussianKernel([[2.0]]), name="g2")
    est = is_probability(spec, terminal_event(1.0), None, None, 256, 4000, seed=5)
    assert 0 < est.estimate < 1 and est.rel_error < 0.2


def _state_dependent_model():
    from modev.kernels import CustomKernel, box_muller

    sig2 = lambda x: 1.0 + x[..., :1] ** 2  # noqa: E731
    kern = CustomKernel(
        1,
        log_mgf=lambda x, a: 0.5 * sig2(np.asarray(x))[..., 0] * a[..., 0] ** 2,
        sample=lambda x, u: np.sqrt(sig2(np.asarray(x))) * box_muller(u, 1),
        n_uniforms=2,
        tilted_sample=lambda x, a, u: sig2(np.asarray(x)) * a + np.sqrt(sig2(np.asarray(x))) * box_muller(u, 1),
        covariance=lambda x: sig2(np.atleast_1d(np.asarray(x, dtype=float)))[..., None],
    )
    return ModelSpec(1, [1.0], AffineDrift([[-1.0]]), kern, name="hetero")


def test_state_dependent_schedule_follows_limit_path():
    spec = _state_dependent_model()
    n = 200
    sched = tilt_schedule_from_control(spec, _const([1.0]), 10.0, n)
    s = np.arange(n) / n
    x0 = np.exp(-s)
    assert np.allclose(sched.alphas[:, 0], 1.0 / (np.sqrt(1 + x0 ** 2) * spec.amplification(n)), rtol=1e-8)
    # log-weight variance is about int u^2 sqrt(n), so keep u small for a usable check
    est = is_probability(spec, WholeSpace(), _const([0.2]), 10.0, n, 4000, seed=3)
    assert abs(est.estimate - 1.0) <= 3 * est.stderr
    traj = simulate_controlled(spec, sched, n, seed=1)
    assert traj.identity_gap() < 1e-10
