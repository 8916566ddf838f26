"""Problem instances: drift, noise kernel, initial point and scaling sequence."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import kernels as _k
from .errors import DomainError, ModelError
from .kernels import NoiseKernel
from .rng import CounterStream

FD_REL_STEP = 1e-5

DRIFT_AFFINE, DRIFT_TANH = 0, 1


class Drift:
    """Vector field ``b`` with Jacobian ``Db``; both broadcast over leading axes."""

    kind = "custom"

    def __init__(self, fn: Callable, jacobian: Callable | None = None):
        self._fn = fn
        self._jac = jacobian

    def __call__(self, x):
        return np.asarray(self._fn(np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        if self._jac is not None:
            return np.asarray(self._jac(x), dtype=float)
        return fd_jacobian(self, x)

    def core_params(self):
        return None

    def to_dict(self):
        raise TypeError("custom drifts are registered programmatically only")


class AffineDrift(Drift):
    """``b(x) = B x + c``."""

    kind = "affine"

    def __init__(self, B, c=None):
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        d = self.B.shape[0]
        self.c = np.zeros(d) if c is None else np.asarray(c, dtype=float).reshape(d)

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ self.B.T + self.c

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.B, x.shape[:-1] + self.B.shape).copy()

    def core_params(self):
        return {"code": DRIFT_AFFINE, "B": self.B, "c": self.c, "kappa": np.zeros(len(self.c))}

    def to_dict(self):
        return {"name": "affine", "matrix": self.B.tolist(), "offset": self.c.tolist()}


class TanhDrift(Drift):
    """``b_i(x) = c_i - kappa_i tanh(x_i)``: bounded with bounded derivative."""

    kind = "tanh"

    def __init__(self, kappa, c=None):
        self.kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
        self.c = np.zeros_like(self.kappa) if c is None else np.asarray(c, dtype=float).reshape(self.kappa.shape)

    def __call__(self, x):
        return self.c - self.kappa * np.tanh(np.asarray(x, dtype=float))

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        diag = -self.kappa / np.cosh(x) ** 2
        return diag[..., :, None] * np.eye(len(self.kappa))

    def core_params(self):
        d = len(self.kappa)
        return {"code": DRIFT_TANH, "B": np.zeros((d, d)), "c": self.c, "kappa": self.kappa}

    def to_dict(self):
        return {"name": "tanh", "kappa": self.kappa.tolist(), "offset": self.c.tolist()}


def fd_jacobian(fn: Callable, x: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian with step ``1e-5 * (1 + ||x||)``."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    h = FD_REL_STEP * (1.0 + np.linalg.norm(x, axis=-1))[..., None]
    cols = []
    for k in range(d):
        e = np.zeros(d)
        e[k] = 1.0
        cols.append((fn(x + h * e) - fn(x - h * e)) / (2.0 * h))
    return np.stack(cols, axis=-1)


def drift_from_dict(doc: dict, d: int) -> Drift:
    name = doc.get("name")
    if name == "zero":
        return AffineDrift(np.zeros((d, d)))
    if name == "constant":
        return AffineDrift(np.zeros((d, d)), doc["offset"])
    if name in ("affine", "linear"):
        B = doc.get("matrix")
        if B is None:
            B = float(doc.get("rate", -1.0)) * np.eye(d)
        return AffineDrift(B, doc.get("offset"))
    if name == "tanh":
        return TanhDrift(np.broadcast_to(np.asarray(doc.get("kappa", 1.0), dtype=float), (d,)).copy(), doc.get("offset"))
    raise ModelError(f"unknown drift {name!r}")


@dataclass
class Bounds:
    """Declared regularity constants (metadata; ``None`` = undeclared)."""

    K_b: float | None = None
    K_A: float | None = None
    K_mgf: float | None = None
    lam: float | None = None


@dataclass
class ModelSpec:
    dimension: int
    x0: np.ndarray
    drift: Drift
    kernel: NoiseKernel
    gamma: float = 0.25
    bounds: Bounds = field(default_factory=Bounds)
    name: str = "custom"

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if self.dimension < 1 or self.x0.shape != (self.dimension,):
            raise ModelError(f"x0 must have shape ({self.dimension},)")
        if self.kernel.dimension != self.dimension:
            raise ModelError("kernel dimension does not match model dimension")
        if not 0.0 < self.gamma < 0.5:
            raise ModelError(f"gamma must lie in (0, 1/2), got {self.gamma}")

    def a(self, n) -> float:
        """Scaling sequence ``a(n) = n^-gamma``."""
        return float(n) ** (-self.gamma)

    def amplification(self, n) -> float:
        """``a(n) sqrt(n)``."""
        return float(n) ** (0.5 - self.gamma)

    @property
    def state_independent_kernel(self) -> bool:
        return not self.kernel.state_dependent

    def to_dict(self) -> dict:
        b = self.bounds
        return {
            "dimension": self.dimension,
            "x0": self.x0.tolist(),
            "drift": self.drift.to_dict(),
            "kernel": self.kernel.to_dict(),
            "gamma": self.gamma,
            "bounds": {"K_b": b.K_b, "K_A": b.K_A, "K_mgf": b.K_mgf, "lambda": b.lam},
        }


# --- evaluation wrappers ----------------------------------------------------

def log_mgf(kernel: NoiseKernel, x, alpha) -> float:
    """``H_c(x, alpha)``; ``+inf`` is a legal value outside the mgf domain."""
    alpha = np.asarray(alpha, dtype=float)
    if not np.all(np.isfinite(alpha)):
        raise ValueError("alpha must be finite")
    val = kernel.log_mgf(x, alpha)
    if np.any(np.isnan(val)):
        raise ModelError(f"log_mgf is NaN at x={x}, alpha={alpha}")
    return float(val) if np.ndim(val) == 0 else val


def tilt_mean(kernel: NoiseKernel, x, alpha) -> np.ndarray:
    """Mean of the tilted law, i.e. ``D_alpha H_c(x, alpha)``."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    if not np.linalg.norm(alpha) < kernel.mgf_radius:
        raise DomainError(f"alpha={alpha} outside the mgf radius {kernel.mgf_radius}")
    return kernel.tilt_mean(x, alpha)


def covariance(kernel: NoiseKernel, x=None, tol: float = 1e-10) -> np.ndarray:
    """``A(x)``, symmetrized and checked PSD."""
    A = np.atleast_2d(np.asarray(kernel.covariance(x), dtype=float))
    A = 0.5 * (A + A.T)
    w = np.linalg.eigvalsh(A)
    if w.size and w[0] < -tol * max(1.0, abs(w[-1])):
        raise ModelError(f"covariance at x={x} is not PSD (min eigenvalue {w[0]:.3e})")
    return A


# --- validation ---------------------------------------------------------------

@dataclass
class Clause:
    name: str
    verdict: str  # pass | fail | unverified
    measured: float
    declared: float | None = None
    note: str = ""


@dataclass
class ValidationReport:
    clauses: list[Clause]
    probe_count: int
    box: tuple
    partial: bool = True
    label: str = "sampling-based partial check of the regularity conditions on the probe box"

    @property
    def passed(self) -> bool:
        return all(c.verdict != "fail" for c in self.clauses)

    def clause(self, name: str) -> Clause:
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "partial": self.partial,
            "label": self.label,
            "probe_count": self.probe_count,
            "box": [list(map(float, self.box[0])), list(map(float, self.box[1]))],
            "clauses": [c.__dict__ for c in self.clauses],
        }


def _verdict(measured: float, declared: float | None, slack: float = 1e-9) -> str:
    if not math.isfinite(measured):
        return "fail"
    if declared is None:
        return "unverified"
    return "pass" if measured <= declared * (1 + slack) + slack else "fail"


def _finite_or_raise(value, what: str, x) -> None:
    if not np.all(np.isfinite(value)):
        raise ModelError(f"non-finite {what} at probe point x={np.asarray(x).tolist()}")


def validate_model(spec: ModelSpec, probe_count: int = 64, seed: int = 0, box=None,
                   sampler_draws: int = 20_000) -> ValidationReport:
    """Probe the regularity conditions on a box around ``x0``.

    The supremum over all of R^d cannot be checked; the report covers only
    the probe points and says so.
    """
    if probe_count < 1:
        raise ValueError("probe_count must be >= 1")
    d = spec.dimension
    if box is None:
        lo, hi = spec.x0 - 5.0, spec.x0 + 5.0
    else:
        lo, hi = (np.broadcast_to(np.asarray(v, dtype=float), (d,)) for v in box)
    stream = CounterStream(seed, replication=0)
    u = stream.uniforms(max(probe_count - 1, 0), d)
    probes = np.vstack([spec.x0[None, :], lo + (hi - lo) * u]) if probe_count > 1 else spec.x0[None, :]
    probes = np.vstack([probes, lo[None, :], hi[None, :]])

    bounds = spec.bounds
    lam = bounds.lam if bounds.lam is not None else min(1.0, 0.5 * spec.kernel.mgf_radius)
    alphas = _sphere_probes(d, lam, stream)

    max_b = max_db = max_h = max_a = fd_err = 0.0
    third = 0.0
    for x in probes:
        bx = spec.drift(x)
        _finite_or_raise(bx, "drift", x)
        J = spec.drift.jacobian(x)
        _finite_or_raise(J, "drift Jacobian", x)
        max_b = max(max_b, float(np.linalg.norm(bx)))
        max_db = max(max_db, float(np.linalg.norm(J, 2)))
        J_fd = fd_jacobian(spec.drift, x)
        fd_err = max(fd_err, float(np.linalg.norm(J_fd - J, 2) / (1.0 + np.linalg.norm(J, 2))))
        H = np.asarray(spec.kernel.log_mgf(x, alphas), dtype=float)
        if np.any(np.isnan(H)):
            raise ModelError(f"non-finite log_mgf at probe point x={x.tolist()}")
        max_h = max(max_h, float(np.max(H)))
        A = covariance(spec.kernel, x)
        _finite_or_raise(A, "covariance", x)
        max_a = max(max_a, float(np.linalg.norm(A, 2)))
        third = max(third, _third_derivative_probe(spec.kernel, x, min(lam, 0.5)))

    y = spec.kernel.draw(spec.x0, np.zeros(d), lambda w: CounterStream(seed, replication=1).uniforms(sampler_draws, w))
    _finite_or_raise(y, "sampler output", spec.x0)
    mean_norm = float(np.linalg.norm(y.mean(axis=0)))
    tr = float(np.trace(covariance(spec.kernel, spec.x0)))
    mean_tol = 5.0 * math.sqrt(tr / sampler_draws) + 1e-12

    clauses = [
        Clause("mgf_bound", _verdict(max_h, bounds.K_mgf), max_h, bounds.K_mgf,
               f"max H_c over ||alpha|| = {lam:g} on probes"),
        Clause("drift_bound", _verdict(max_b, bounds.K_b), max_b, bounds.K_b, "max ||b(x)||"),
        Clause("jacobian_bound", _verdict(max_db, bounds.K_b), max_db, bounds.K_b, "max ||Db(x)||"),
        Clause("jacobian_consistency", "pass" if fd_err <= 1e-4 else "fail", fd_err, 1e-4,
               "central-difference cross-check of Db"),
        Clause("covariance_bound", _verdict(max_a, bounds.K_A), max_a, bounds.K_A, "max ||A(x)||"),
        Clause("sampler_mean", "pass" if mean_norm <= mean_tol else "fail", mean_norm, mean_tol,
               f"norm of sample mean over {sampler_draws} draws at x0"),
        Clause("third_derivative", "unverified", third, None,
               "max |d^3 H_c| near alpha = 0 (finite differences)"),
    ]
    return ValidationReport(clauses, len(probes), (lo, hi))


def _sphere_probes(d: int, radius: float, stream: CounterStream, count: int = 32) -> np.ndarray:
    axes = np.vstack([np.eye(d), -np.eye(d)])
    if d == 1:
        return radius * axes
    z = _k.box_muller(stream.uniforms(count, 2 * ((d + 1) // 2)), d)
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return radius * np.vstack([axes, z])


def _third_derivative_probe(kernel: NoiseKernel, x, radius: float) -> float:
    d = kernel.dimension
    h = 1e-2 * max(radius, 1e-3)
    best = 0.0
    for k in range(d):
        e = np.zeros(d)
        e[k] = 1.0
        for c in (0.0, 0.5 * radius):
            a = c * e
            pts = np.array([a + 2 * h * e, a + h * e, a - h * e, a - 2 * h * e])
            f = np.asarray(kernel.log_mgf(x, pts), dtype=float)
            if not np.all(np.isfinite(f)):
                continue
            best = max(best, abs((f[0] - 2 * f[1] + 2 * f[2] - f[3]) / (2 * h**3)))
    return best


# --- JSON and catalog ------------------------------------------------------------

MODEL_KEYS = {"dimension", "x0", "drift", "kernel", "gamma", "bounds", "name"}


def model_from_dict(doc: dict) -> ModelSpec:
    unknown = set(doc) - MODEL_KEYS
    if unknown:
        raise ModelError(f"unknown model keys: {sorted(unknown)}")
    d = int(doc["dimension"])
    kernel_doc = dict(doc["kernel"])
    kernel_doc.setdefault("dimension", d)
    b = doc.get("bounds") or {}
    bounds = Bounds(b.get("K_b"), b.get("K_A"), b.get("K_mgf"), b.get("lambda", b.get("lam")))
    return ModelSpec(
        dimension=d,
        x0=doc.get("x0", [0.0] * d),
        drift=drift_from_dict(doc.get("drift", {"name": "zero"}), d),
        kernel=_k.kernel_from_dict(kernel_doc),
        gamma=float(doc.get("gamma", 0.25)),
        bounds=bounds,
        name=doc.get("name", "json"),
    )


def load_model(path) -> ModelSpec:
    with open(Path(path), encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def gauss1(gamma: float = 0.25) -> ModelSpec:
    """d = 1, b = 0, standard Gaussian noise."""
    return ModelSpec(1, [0.0], AffineDrift([[0.0]]), _k.GaussianKernel([[1.0]]), gamma,
                     Bounds(K_b=0.0, K_A=1.0, K_mgf=0.5, lam=1.0), "gauss1")


def ou1(gamma: float = 0.25) -> ModelSpec:
    """d = 1, b(x) = -x from x0 = 0 (so X0 = 0), standard Gaussian noise."""
    return ModelSpec(1, [0.0], AffineDrift([[-1.0]]), _k.GaussianKernel([[1.0]]), gamma,
                     Bounds(K_b=None, K_A=1.0, K_mgf=0.5, lam=1.0), "ou1")


def rad1(gamma: float = 0.25) -> ModelSpec:
    """d = 1, b = 0, symmetric +-1 noise."""
    return ModelSpec(1, [0.0], AffineDrift([[0.0]]), _k.rademacher(1), gamma,
                     Bounds(K_b=0.0, K_A=1.0, K_mgf=math.log(math.cosh(1.0)), lam=1.0), "rad1")


def lap1(gamma: float = 0.25) -> ModelSpec:
    """d = 1, b = 0, unit-scale Laplace noise (mgf radius 1)."""
    return ModelSpec(1, [0.0], AffineDrift([[0.0]]), _k.laplace(1), gamma,
                     Bounds(K_b=0.0, K_A=2.0, K_mgf=-math.log(0.75), lam=0.5), "lap1")


def degen2(gamma: float = 0.25) -> ModelSpec:
    """d = 2, b = 0, noise = (+-1) x (point mass at 0)."""
    kern = _k.degenerate_product([("rademacher", 1.0), ("point", 0.0)])
    return ModelSpec(2, [0.0, 0.0], AffineDrift(np.zeros((2, 2))), kern, gamma,
                     Bounds(K_b=0.0, K_A=1.0, lam=1.0), "degen2")


def dint2(gamma: float = 0.25) -> ModelSpec:
    """d = 2 damped double integrator driven by noise in the second coordinate only."""
    B = np.array([[0.0, 1.0], [0.0, -0.5]])
    kern = _k.degenerate_product([("point", 0.0), ("gaussian", 1.0)])
    return ModelSpec(2, [0.0, 0.0], AffineDrift(B), kern, gamma, Bounds(K_A=1.0, lam=1.0), "dint2")


def tanh1(gamma: float = 0.25) -> ModelSpec:
    """d = 1, b(x) = -tanh(x) from x0 = 1: satisfies the global drift bounds."""
    return ModelSpec(1, [1.0], TanhDrift([1.0]), _k.GaussianKernel([[1.0]]), gamma,
                     Bounds(K_b=1.0, K_A=1.0, K_mgf=0.5, lam=1.0), "tanh1")


CATALOG: dict[str, Callable[..., ModelSpec]] = {
    "gauss1": gauss1,
    "ou1": ou1,
    "rad1": rad1,
    "lap1": lap1,
    "degen2": degen2,
    "dint2": dint2,
    "tanh1": tanh1,
}


def get_model(name_or_path: str, gamma: float | None = None) -> ModelSpec:
    if name_or_path in CATALOG:
        return CATALOG[name_or_path]() if gamma is None else CATALOG[name_or_path](gamma)
    spec = load_model(name_or_path)
    if gamma is not None:
        spec.gamma = gamma
        spec.__post_init__()
    return spec
