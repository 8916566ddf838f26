"""Exponential-tilt schedules built from a control ``u``.

Step ``i`` tilts the noise by ``alpha_i = A_K^{-1/2}(x) u_K(s_i) / (a(n) sqrt(n))``
with ``s_i = i/n``, ``u_K`` the radial clip of ``u`` at ``K`` and ``x`` the
limit path ``X0(s_i)`` (state-frozen, the default) or the current controlled
state (feedback).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import GridPath, default_lln_grid, lln_limit
from .errors import DomainError
from .model import ModelSpec, covariance
from .ratefn import ControlPath, linearize
from .spectral import truncated_inv_sqrt


def clip_control(values: np.ndarray, K: float) -> np.ndarray:
    """``u_K = u`` where ``||u|| <= K``, ``K u/||u||`` otherwise."""
    values = np.asarray(values, dtype=float)
    norms = np.linalg.norm(values, axis=-1, keepdims=True)
    scale = np.where(norms > K, K / np.where(norms > 0, norms, 1.0), 1.0)
    return values * scale


def default_K(u: ControlPath | None) -> float:
    """Ten times the largest control norm, so truncation is inactive; 1 for a zero control."""
    if u is None:
        return 1.0
    top = float(np.max(np.linalg.norm(u.values, axis=1)))
    return 10.0 * top if top > 0 else 1.0


def min_admissible_n(spec: ModelSpec, K: float) -> int:
    """Smallest ``n`` with ``K^2 / (a(n) sqrt(n))`` strictly inside the mgf radius."""
    radius = spec.kernel.mgf_radius
    if math.isinf(radius):
        return 1
    expo = 1.0 / (0.5 - spec.gamma)
    n = max(1, math.floor((K * K / radius) ** expo))
    while not K * K / spec.amplification(n) < radius:
        n += 1
    return n


@dataclass
class ControlSchedule:
    n: int
    K: float
    alphas: np.ndarray               # (n, d), state-frozen tilts
    control: ControlPath | None = None
    feedback: Callable | None = None  # (i, xbar (R, d)) -> (R, d)

    @property
    def mode(self) -> str:
        return "frozen" if self.feedback is None else "feedback"

    @property
    def dimension(self) -> int:
        return self.alphas.shape[1]

    @classmethod
    def zero(cls, spec: ModelSpec, n: int) -> "ControlSchedule":
        return cls(n, 1.0, np.zeros((n, spec.dimension)))

    @classmethod
    def constant(cls, spec: ModelSpec, n: int, alpha) -> "ControlSchedule":
        """Same raw tilt at every step (testing helper, no control attached)."""
        return cls(n, math.inf, np.tile(np.atleast_1d(np.asarray(alpha, dtype=float)), (n, 1)))

    def fingerprint(self, seed: int | None = None) -> str:
        h = hashlib.sha256()
        src = self.control.values if self.control is not None else self.alphas
        h.update(np.ascontiguousarray(src, dtype=np.float64).tobytes())
        h.update(f"|K={self.K!r}|n={self.n}|seed={seed}|mode={self.mode}".encode())
        return h.hexdigest()[:16]


def tilt_schedule_from_control(spec: ModelSpec, u: ControlPath, K: float, n: int,
                               feedback: bool = False) -> ControlSchedule:
    """Tilt schedule for the control ``u`` with truncation level ``K`` at scale ``n``.

    Raises
    ------
    DomainError
        if ``K^2 / (a(n) sqrt(n))`` is not inside the kernel's mgf radius;
        ``min_n`` carries the smallest admissible ``n``.
    """
    if not K > 0:
        raise ValueError(f"K must be positive, got {K}")
    if n < 1:
        raise ValueError("n must be >= 1")
    amp = spec.amplification(n)
    if not K * K / amp < spec.kernel.mgf_radius:
        need = min_admissible_n(spec, K)
        raise DomainError(
            f"tilt bound K^2/(a(n) sqrt(n)) = {K * K / amp:.6g} exceeds the mgf radius "
            f"{spec.kernel.mgf_radius:.6g} at n={n}; need n >= {need}",
            min_n=need,
        )
    s = np.arange(n) / n
    uk = clip_control(u(s), K)
    if spec.kernel.state_dependent:
        x0 = lln_limit(spec, default_lln_grid(n))(s)
        roots = np.stack([truncated_inv_sqrt(covariance(spec.kernel, x), K) for x in x0])
    else:
        roots = np.broadcast_to(truncated_inv_sqrt(covariance(spec.kernel, spec.x0), K),
                                (n, spec.dimension, spec.dimension))
    alphas = np.einsum("iab,ib->ia", roots, uk) / amp
    fb = None
    if feedback:
        kern = spec.kernel

        def fb(i, xbar):
            roots_i = np.stack([truncated_inv_sqrt(covariance(kern, x), K) for x in np.atleast_2d(xbar)])
            return np.einsum("rab,b->ra", roots_i, uk[i]) / amp

    return ControlSchedule(n, float(K), alphas, u, fb)


def truncated_limit(spec: ModelSpec, u: ControlPath, K: float | None, m: int = 1000):
    """Limit cost and path of the truncated construction on the ``m``-grid.

    Returns ``(cost, phi)`` with ``cost = 1/2 int ||A_K^{-1/2} u_K||_A^2`` and
    ``phi' = Db(X0) phi + A A_K^{-1/2} u_K``.  ``K=None`` gives the untruncated
    pair ``(1/2 int ||u||^2, phi^u)`` driven by ``A^{1/2} u``.
    """
    sys = linearize(spec, m)
    t = np.arange(m + 1) / m
    uv = u(t)
    if K is None:
        forcing = np.einsum("jab,jb->ja", sys.root, uv)
        sq = np.sum(uv * uv, axis=1)
    else:
        uk = clip_control(uv, K)
        roots = np.stack([truncated_inv_sqrt(A, K) for A in sys.cov])
        v = np.einsum("jab,jb->ja", roots, uk)
        forcing = np.einsum("jab,jb->ja", sys.cov, v)
        sq = np.einsum("ja,ja->j", v, forcing)
    h = 1.0 / m
    cost = 0.5 * h * float(np.sum(sq) - 0.5 * (sq[0] + sq[-1]))
    return cost, GridPath(sys.propagate(forcing))
