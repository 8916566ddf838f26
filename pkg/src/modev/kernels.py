"""Noise kernels: centered distributions with log-MGF, covariance and exact tilting.

All evaluation methods broadcast over leading axes of ``x`` and ``alpha``
(trailing axis = dimension).  Draws are produced from uniforms supplied by
the caller (see :mod:`modev.rng`); kernels hold no random state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp, xlogy

from .errors import DomainError, ModelError, UnsupportedTiltError
from .spectral import pinv, pinv_quad_form, psd_sqrt

# codes shared with the compiled core
GAUSS, PRODUCT, DISCRETE = 0, 1, 2
C_POINT, C_RADEMACHER, C_GAUSSIAN, C_LAPLACE = 0, 1, 2, 3
_COMPONENT_CODES = {"point": C_POINT, "rademacher": C_RADEMACHER, "gaussian": C_GAUSSIAN, "laplace": C_LAPLACE}


def box_muller(u: np.ndarray, count: int) -> np.ndarray:
    """Standard normals from pairs of uniforms: ``(u[2k], u[2k+1]) -> z[2k], z[2k+1]``."""
    r = np.sqrt(-2.0 * np.log(u[..., 0::2]))
    theta = (2.0 * np.pi) * u[..., 1::2]
    z = np.empty(u.shape[:-1] + (2 * r.shape[-1],))
    z[..., 0::2] = r * np.cos(theta)
    z[..., 1::2] = r * np.sin(theta)
    return z[..., :count]


def _as_alpha(alpha, d):
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim == 0:
        alpha = alpha.reshape(1)
    if alpha.shape[-1] != d:
        raise ValueError(f"tilt has dimension {alpha.shape[-1]}, kernel has {d}")
    return alpha


class NoiseKernel:
    """Base class.  Subclasses implement the ``_h``/``_mean``/``_cov``/``_draw`` hooks."""

    kind = "Custom"
    dimension: int
    mgf_radius = math.inf
    state_dependent = False
    n_uniforms: int

    # --- evaluation -------------------------------------------------------
    def log_mgf(self, x, alpha):
        return self._h(x, _as_alpha(alpha, self.dimension))

    def tilt_mean(self, x, alpha):
        return self._mean(x, _as_alpha(alpha, self.dimension))

    def covariance(self, x=None) -> np.ndarray:
        return self._cov(x)

    def legendre(self, x, beta) -> tuple[float, bool]:
        """``(L_c(x, beta), lower_bound_flag)``."""
        return _legendre_ascent(self, x, np.atleast_1d(np.asarray(beta, dtype=float)))

    def relative_entropy(self, x, alpha):
        """``R(eta_alpha || mu_x) = <alpha, tilt_mean> - H_c`` for the exponential tilt."""
        alpha = _as_alpha(alpha, self.dimension)
        return np.sum(alpha * self.tilt_mean(x, alpha), axis=-1) - self.log_mgf(x, alpha)

    # --- sampling -----------------------------------------------------------
    def draw(self, x, alpha, source: Callable[[int], np.ndarray]) -> np.ndarray:
        """Exact draws from the tilted law; ``source(width)`` yields uniform rows."""
        return self._draw(x, _as_alpha(alpha, self.dimension), source)

    def sampler(self, x, stream, size: int = 1) -> np.ndarray:
        return self.tilted_sampler(x, np.zeros(self.dimension), stream, size)

    def tilted_sampler(self, x, alpha, stream, size: int = 1) -> np.ndarray:
        alpha = _as_alpha(alpha, self.dimension)
        self.check_tilt(alpha)
        return self.draw(x, alpha, lambda width: stream.uniforms(size, width))

    def check_tilt(self, alpha) -> None:
        norm = np.max(np.linalg.norm(np.atleast_2d(alpha), axis=-1))
        if not norm < self.mgf_radius:
            raise DomainError(f"tilt norm {norm:.6g} outside mgf radius {self.mgf_radius:.6g}")

    # hook for the compiled core; None means "not supported"
    def core_params(self):
        return None

    def to_dict(self) -> dict:
        raise TypeError(f"{type(self).__name__} kernels are registered programmatically only")


class GaussianKernel(NoiseKernel):
    """Centered Gaussian ``N(0, C)``; tilting shifts the mean to ``C alpha``."""

    kind = "Gaussian"

    def __init__(self, cov):
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.cov = 0.5 * (cov + cov.T)
        self.root = psd_sqrt(self.cov)
        self.dimension = self.cov.shape[0]
        self.n_uniforms = 2 * ((self.dimension + 1) // 2)

    def _h(self, x, alpha):
        return 0.5 * np.sum((alpha @ self.cov) * alpha, axis=-1)

    def _mean(self, x, alpha):
        return alpha @ self.cov

    def _cov(self, x):
        return self.cov.copy()

    def legendre(self, x, beta):
        return 0.5 * pinv_quad_form(self.cov, beta), False

    def _draw(self, x, alpha, source):
        z = box_muller(source(self.n_uniforms), self.dimension)
        return z @ self.root.T + alpha @ self.cov

    def core_params(self):
        return {"code": GAUSS, "root": self.root, "cov": self.cov}

    def to_dict(self):
        return {"name": "gaussian", "cov": self.cov.tolist()}


@dataclass(frozen=True)
class Component:
    """One coordinate of a product kernel."""

    type: str  # point | rademacher | gaussian | laplace
    scale: float = 1.0

    def __post_init__(self):
        if self.type not in _COMPONENT_CODES:
            raise ValueError(f"unknown component type {self.type!r}")
        if self.scale < 0 or not math.isfinite(self.scale):
            raise ValueError("component scale must be finite and nonnegative")


class ProductKernel(NoiseKernel):
    """Independent coordinates, each a point mass, symmetric sign, Gaussian or Laplace law."""

    def __init__(self, components: Sequence[Component], kind: str | None = None):
        self.components = tuple(components)
        self.dimension = len(self.components)
        self.codes = np.array([_COMPONENT_CODES[c.type] for c in self.components], dtype=np.int64)
        self.scales = np.array([c.scale if c.type != "point" else 0.0 for c in self.components])
        self.n_uniforms = 2 * self.dimension
        lap = self.codes == C_LAPLACE
        self.mgf_radius = float(np.min(1.0 / self.scales[lap])) if lap.any() else math.inf
        if kind is None:
            types = {c.type for c in self.components}
            kind = {"rademacher": "Rademacher", "laplace": "Laplace"}.get(types.pop(), "DegenerateProduct") if len(types) == 1 else "DegenerateProduct"
        self.kind = kind

    def _parts(self, alpha):
        s = self.scales
        rad = self.codes == C_RADEMACHER
        gau = self.codes == C_GAUSSIAN
        lap = self.codes == C_LAPLACE
        return s, rad, gau, lap

    def _h(self, x, alpha):
        s, rad, gau, lap = self._parts(alpha)
        sa = s * alpha
        out = np.zeros(alpha.shape)
        out[..., rad] = _log_cosh(sa[..., rad])
        out[..., gau] = 0.5 * sa[..., gau] ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            t = sa[..., lap] ** 2
            out[..., lap] = np.where(t < 1.0, -np.log1p(-np.minimum(t, 1.0)), np.inf)
        return np.sum(out, axis=-1)

    def _mean(self, x, alpha):
        s, rad, gau, lap = self._parts(alpha)
        sa = s * alpha
        out = np.zeros(alpha.shape)
        out[..., rad] = s[rad] * np.tanh(sa[..., rad])
        out[..., gau] = s[gau] * sa[..., gau]
        t = sa[..., lap]
        if np.any(np.abs(t) >= 1.0):
            raise DomainError("tilt outside the Laplace mgf domain")
        out[..., lap] = 2.0 * s[lap] * t / (1.0 - t * t)
        return out

    def _cov(self, x):
        v = self.scales**2
        v = np.where(self.codes == C_LAPLACE, 2.0 * v, v)
        return np.diag(v)

    def legendre(self, x, beta):
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        total = 0.0
        for comp, b in zip(self.components, beta):
            total += _component_legendre(comp, float(b))
        return total, False

    def _draw(self, x, alpha, source):
        u = source(self.n_uniforms)
        u0, u1 = u[..., 0::2], u[..., 1::2]
        s, rad, gau, lap = self._parts(alpha)
        alpha = np.broadcast_to(alpha, u0.shape)
        sa = s * alpha
        y = np.zeros(u0.shape)
        if rad.any():
            p_plus = 0.5 * (1.0 + np.tanh(sa[..., rad]))
            y[..., rad] = np.where(u0[..., rad] < p_plus, s[rad], -s[rad])
        if gau.any():
            z = np.sqrt(-2.0 * np.log(u0[..., gau])) * np.cos(2.0 * np.pi * u1[..., gau])
            y[..., gau] = s[gau] * z + s[gau] * sa[..., gau]
        if lap.any():
            t = sa[..., lap]
            b = s[lap]
            plus = u0[..., lap] < 0.5 * (1.0 + t)
            rate = np.where(plus, 1.0 - t, 1.0 + t) / b
            mag = -np.log(u1[..., lap]) / rate
            y[..., lap] = np.where(plus, mag, -mag)
        return y

    def core_params(self):
        return {"code": PRODUCT, "codes": self.codes, "scales": self.scales}

    def to_dict(self):
        return {"name": "product", "components": [[c.type, c.scale] for c in self.components]}


def _log_cosh(t):
    a = np.abs(t)
    return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)


def _component_legendre(comp: Component, beta: float) -> float:
    s = comp.scale
    if comp.type == "point" or s == 0.0:
        return 0.0 if beta == 0.0 else math.inf
    if comp.type == "gaussian":
        return beta * beta / (2.0 * s * s)
    if comp.type == "rademacher":
        t = beta / s
        if abs(t) > 1.0:
            return math.inf
        return float(0.5 * (xlogy(1.0 + t, 1.0 + t) + xlogy(1.0 - t, 1.0 - t)))
    # laplace: maximizer of a*beta + log(1 - s^2 a^2)
    if beta == 0.0:
        return 0.0
    a = (math.sqrt(s * s + beta * beta) - s) / (s * beta)
    return a * beta + math.log1p(-(s * a) ** 2)


def rademacher(d: int = 1, scale: float = 1.0) -> ProductKernel:
    return ProductKernel([Component("rademacher", scale)] * d, kind="Rademacher")


def laplace(d: int = 1, scale: float = 1.0) -> ProductKernel:
    return ProductKernel([Component("laplace", scale)] * d, kind="Laplace")


def degenerate_product(components) -> ProductKernel:
    comps = [c if isinstance(c, Component) else Component(*c) for c in components]
    return ProductKernel(comps, kind="DegenerateProduct")


def point_mass(d: int = 1) -> ProductKernel:
    return ProductKernel([Component("point")] * d, kind="DegenerateProduct")


class DiscreteFiniteKernel(NoiseKernel):
    """Finitely many atoms; tilting reweights atoms by ``exp(<y, alpha>)``."""

    kind = "DiscreteFinite"

    def __init__(self, atoms, probs):
        atoms = np.asarray(atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        probs = np.asarray(probs, dtype=float)
        if probs.shape != (atoms.shape[0],) or np.any(probs <= 0):
            raise ModelError("probabilities must be positive, one per atom")
        probs = probs / probs.sum()
        mean = probs @ atoms
        if np.linalg.norm(mean) > 1e-12 * max(1.0, np.abs(atoms).max()):
            raise ModelError(f"discrete kernel is not centered: mean {mean}")
        self.atoms = atoms
        self.probs = probs
        self.log_probs = np.log(probs)
        self.dimension = atoms.shape[1]
        self.n_uniforms = 2

    def _logits(self, alpha):
        return self.log_probs + alpha @ self.atoms.T

    def tilted_probs(self, alpha) -> np.ndarray:
        alpha = _as_alpha(alpha, self.dimension)
        z = self._logits(alpha)
        return np.exp(z - logsumexp(z, axis=-1, keepdims=True))

    def _h(self, x, alpha):
        return logsumexp(self._logits(alpha), axis=-1)

    def _mean(self, x, alpha):
        return self.tilted_probs(alpha) @ self.atoms

    def _cov(self, x):
        return (self.atoms * self.probs[:, None]).T @ self.atoms

    def legendre(self, x, beta):
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        k = self.atoms.shape[0]
        res = linprog(
            np.zeros(k),
            A_eq=np.vstack([self.atoms.T, np.ones((1, k))]),
            b_eq=np.append(beta, 1.0),
            bounds=[(0, None)] * k,
            method="highs",
        )
        if res.status != 0:
            return math.inf, False
        return _legendre_newton(self, beta), False

    def _draw(self, x, alpha, source):
        u = source(self.n_uniforms)[..., 0]
        cdf = np.cumsum(self.tilted_probs(alpha), axis=-1)
        cdf = np.broadcast_to(cdf, u.shape + cdf.shape[-1:])
        idx = np.minimum(np.sum(cdf < u[..., None], axis=-1), self.atoms.shape[0] - 1)
        return self.atoms[idx]

    def core_params(self):
        return {"code": DISCRETE, "atoms": self.atoms}

    def to_dict(self):
        return {"name": "discrete", "atoms": self.atoms.tolist(), "probs": self.probs.tolist()}


class CustomKernel(NoiseKernel):
    """User-supplied kernel.

    ``log_mgf(x, alpha)`` and ``sample(x, u)`` must broadcast over leading
    axes; ``u`` has ``n_uniforms`` trailing entries.  Exact tilting comes
    from ``tilted_sample(x, alpha, u)`` if given, otherwise from rejection
    sampling against ``mu_x`` with envelope ``exp(<y, alpha> - tilt_bound(alpha))``,
    which requires ``<y, alpha> <= tilt_bound(alpha)`` on the support.
    """

    max_attempts = 10_000

    def __init__(
        self,
        dimension: int,
        log_mgf: Callable,
        sample: Callable,
        n_uniforms: int,
        *,
        covariance: Callable | None = None,
        tilted_sample: Callable | None = None,
        tilt_bound: Callable | None = None,
        mgf_radius: float = math.inf,
        state_dependent: bool = True,
        legendre_box: float = 50.0,
    ):
        self.dimension = int(dimension)
        self._log_mgf = log_mgf
        self._sample = sample
        self.n_uniforms = int(n_uniforms)
        self._covariance = covariance
        self._tilted_sample = tilted_sample
        self._tilt_bound = tilt_bound
        self.mgf_radius = float(mgf_radius)
        self.state_dependent = state_dependent
        self.legendre_box = float(legendre_box)
        self.covariance_stderr = None

    def _h(self, x, alpha):
        out = np.asarray(self._log_mgf(x, alpha), dtype=float)
        if np.any(np.isnan(out)):
            raise ModelError(f"log_mgf returned NaN at x={x}, alpha={alpha}")
        return out

    def fd_step(self, alpha):
        return 1e-5 * (1.0 + np.linalg.norm(alpha, axis=-1, keepdims=True))

    def _mean(self, x, alpha):
        h = self.fd_step(alpha)
        out = np.empty(np.broadcast_shapes(alpha.shape, h.shape))
        for k in range(self.dimension):
            e = np.zeros(self.dimension)
            e[k] = 1.0
            out[..., k] = (self._h(x, alpha + h * e) - self._h(x, alpha - h * e)) / (2.0 * h[..., 0])
        return out

    def _cov(self, x, samples: int = 100_000, seed: int = 0):
        if self._covariance is not None:
            return np.asarray(self._covariance(x), dtype=float)
        from .rng import CounterStream

        stream = CounterStream(seed)
        y = self._sample(x, stream.uniforms(samples, self.n_uniforms))
        cov = y.T @ y / samples
        dev = np.einsum("ni,nj->nij", y, y) - cov
        self.covariance_stderr = np.sqrt(np.mean(dev**2, axis=0) / samples)
        return 0.5 * (cov + cov.T)

    def _draw(self, x, alpha, source):
        if self._tilted_sample is not None:
            return np.asarray(self._tilted_sample(x, alpha, source(self.n_uniforms)))
        if not np.any(alpha):
            return np.asarray(self._sample(x, source(self.n_uniforms)))
        if self._tilt_bound is None:
            raise UnsupportedTiltError("custom kernel has neither tilted_sample nor tilt_bound")
        bound = np.asarray(self._tilt_bound(alpha), dtype=float)
        out = None
        pending = None
        for _ in range(self.max_attempts):
            u = source(self.n_uniforms + 2)
            y = np.asarray(self._sample(x, u[..., : self.n_uniforms]))
            log_acc = np.sum(y * alpha, axis=-1) - bound
            if np.any(log_acc > 1e-12):
                raise ModelError("tilt_bound is not an upper bound for <y, alpha>")
            ok = np.log(u[..., self.n_uniforms]) <= log_acc
            if out is None:
                out = np.array(y, dtype=float)
                pending = ~ok
            else:
                take = pending & ok
                out[take] = y[take]
                pending &= ~ok
            if not pending.any():
                return out
        raise ModelError("rejection sampler exceeded its attempt budget")

    def legendre(self, x, beta):
        return _legendre_ascent(self, x, np.atleast_1d(np.asarray(beta, dtype=float)))


def _legendre_newton(kernel: NoiseKernel, beta: np.ndarray, max_iter: int = 200) -> float:
    """Damped Newton ascent of ``<a, beta> - H(a)`` using the tilted covariance as Hessian."""
    alpha = np.zeros_like(beta)
    f = 0.0
    for _ in range(max_iter):
        p = kernel.tilted_probs(alpha)
        mean = p @ kernel.atoms
        grad = beta - mean
        if np.linalg.norm(grad) < 1e-13:
            break
        centered = kernel.atoms - mean
        step = pinv((centered * p[:, None]).T @ centered) @ grad
        slope = float(grad @ step)
        t = 1.0
        while True:
            cand = alpha + t * step
            fc = float(cand @ beta - kernel.log_mgf(None, cand))
            if fc >= f + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        if fc <= f:
            break
        alpha, f = cand, fc
    return max(f, 0.0)


def _legendre_ascent(kernel: NoiseKernel, x, beta: np.ndarray, starts: int = 5, max_iter: int = 2000):
    """Multi-start projected gradient ascent over ``||alpha|| <= box``.

    Returns ``(value, lower_bound_flag)``; the flag is set when the best
    maximizer sits on the box boundary, in which case the true transform
    may be larger.
    """
    d = beta.shape[0]
    box = min(getattr(kernel, "legendre_box", 50.0), kernel.mgf_radius * (1 - 1e-6))
    rng = np.random.default_rng(12345)
    inits = [np.zeros(d)] + [0.5 * box * v / np.linalg.norm(v) for v in rng.standard_normal((starts - 1, d))]

    def obj(a):
        return float(a @ beta - kernel.log_mgf(x, a))

    def project(a):
        n = np.linalg.norm(a)
        return a if n <= box else a * (box / n)

    best_val, best_a = -math.inf, None
    for a in inits:
        f = obj(a)
        step = 1.0
        for _ in range(max_iter):
            g = beta - kernel.tilt_mean(x, a)
            if np.linalg.norm(g) < 1e-10:
                break
            while step > 1e-14:
                cand = project(a + step * g)
                fc = obj(cand)
                if fc >= f:
                    break
                step *= 0.5
            if np.linalg.norm(cand - a) < 1e-14:
                break
            a, f = cand, fc
            step *= 2.0
        if f > best_val:
            best_val, best_a = f, a
    on_boundary = bool(np.linalg.norm(best_a) >= box * (1 - 1e-6))
    return max(best_val, 0.0), on_boundary


def kernel_from_dict(doc: dict) -> NoiseKernel:
    name = doc.get("name")
    if name == "gaussian":
        if "cov" in doc:
            return GaussianKernel(doc["cov"])
        d = int(doc.get("dimension", 1))
        return GaussianKernel(float(doc.get("variance", 1.0)) * np.eye(d))
    if name == "rademacher":
        return rademacher(int(doc.get("dimension", 1)), float(doc.get("scale", 1.0)))
    if name == "laplace":
        return laplace(int(doc.get("dimension", 1)), float(doc.get("scale", 1.0)))
    if name == "point":
        return point_mass(int(doc.get("dimension", 1)))
    if name in ("product", "degenerate_product"):
        return degenerate_product([tuple(c) for c in doc["components"]])
    if name == "discrete":
        return DiscreteFiniteKernel(doc["atoms"], doc["probs"])
    raise ModelError(f"unknown kernel {name!r}")
