"""The moderate-deviation rate as a linear-quadratic control problem.

The rate of a path ``phi`` is the least energy ``1/2 int ||u||^2`` needed to
drive ``phi' = Db(X0) phi + A^{1/2}(X0) u`` from ``phi(0) = 0``.  Terminal
targets are solved in closed form through the controllability Gramian;
smooth functionals go through an adjoint gradient method on a grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import dynamics
from .dynamics import GridPath
from .errors import ConvergenceError
from .kernels import NoiseKernel
from .model import ModelSpec, covariance
from .spectral import RANK_RTOL, eigh_desc, pinv, pinv_quad_form, psd_sqrt

DEFAULT_M = 1000


@dataclass
class ControlPath:
    """Control values on ``t_j = j/m``.

    ``kind="linear"`` interpolates between nodes; ``kind="step"`` holds
    ``values[j]`` on ``[t_j, t_{j+1})`` and ignores the last node.
    """

    values: np.ndarray
    kind: str = "linear"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        self.values = v[:, None] if v.ndim == 1 else v
        if self.kind not in ("linear", "step"):
            raise ValueError(f"unknown control kind {self.kind!r}")

    @property
    def m(self) -> int:
        return self.values.shape[0] - 1

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "linear":
            return dynamics.interpolate(GridPath(self.values), t)
        j = np.minimum(np.floor(t * self.m + 1e-12).astype(int), self.m - 1)
        return self.values[j]

    def cost(self) -> float:
        """``1/2 int ||u||^2``: trapezoid rule for linear controls, exact for step controls."""
        sq = np.sum(self.values**2, axis=1)
        h = 1.0 / self.m
        if self.kind == "step":
            return 0.5 * h * float(np.sum(sq[:-1]))
        return 0.5 * h * float(np.sum(sq) - 0.5 * (sq[0] + sq[-1]))

    @classmethod
    def from_function(cls, fn: Callable, m: int, d: int | None = None) -> "ControlPath":
        t = np.arange(m + 1) / m
        vals = np.array([np.atleast_1d(fn(s)) for s in t], dtype=float)
        if d is not None and vals.shape[1] != d:
            raise ValueError("control dimension mismatch")
        return cls(vals)

    @classmethod
    def zeros(cls, m: int, d: int) -> "ControlPath":
        return cls(np.zeros((m + 1, d)))


@dataclass
class RateSolution:
    value: float
    control: ControlPath | None
    trajectory: GridPath | None
    diagnostics: dict = field(default_factory=dict)

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)

    def to_dict(self) -> dict:
        m = self.trajectory.m if self.trajectory is not None else self.diagnostics.get("grid")
        return {
            "value": self.value if self.finite else None,
            "infinite": not self.finite,
            "grid": m,
            "u_nodes": None if self.control is None else self.control.values.tolist(),
            "phi_nodes": None if self.trajectory is None else self.trajectory.values.tolist(),
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def legendre(kernel: NoiseKernel, x, beta) -> float:
    """``L_c(x, beta) = sup_alpha <alpha, beta> - H_c(x, alpha)``."""
    return legendre_info(kernel, x, beta)[0]


def legendre_info(kernel: NoiseKernel, x, beta) -> tuple[float, bool]:
    """Value and lower-bound flag (set when a numeric maximizer hit its search box)."""
    value, flag = kernel.legendre(x, np.atleast_1d(np.asarray(beta, dtype=float)))
    return float(value), bool(flag)


# --- linearized system on a grid ------------------------------------------------

@dataclass
class LinearizedSystem:
    """``X0``, step maps, ``A`` and ``A^{1/2}`` along the grid ``t_j = j/m``."""

    m: int
    x0: np.ndarray       # (m+1, d)
    maps: np.ndarray     # (m, d, d): Phi(t_{j+1}, t_j)
    cov: np.ndarray      # (m+1, d, d)
    root: np.ndarray     # (m+1, d, d)

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def dimension(self) -> int:
        return self.x0.shape[1]

    def to_end(self) -> np.ndarray:
        return dynamics.transitions_to_end(self.maps)

    def propagate(self, forcing: np.ndarray) -> np.ndarray:
        """Trapezoid-consistent solution of ``phi' = Db phi + f`` with ``phi(0) = 0``."""
        h = self.h
        phi = np.zeros_like(forcing)
        for j in range(self.m):
            M = self.maps[j]
            phi[j + 1] = M @ (phi[j] + 0.5 * h * forcing[j]) + 0.5 * h * forcing[j + 1]
        return phi


def linearize(spec: ModelSpec, m: int = DEFAULT_M) -> LinearizedSystem:
    nodes, mids = dynamics.lln_nodes_and_midpoints(spec, m)
    maps = dynamics.step_maps(spec, m, nodes, mids)
    if spec.kernel.state_dependent:
        cov = np.stack([covariance(spec.kernel, x) for x in nodes])
        root = np.stack([psd_sqrt(A) for A in cov])
    else:
        A = covariance(spec.kernel, spec.x0)
        cov = np.broadcast_to(A, (m + 1,) + A.shape)
        root = np.broadcast_to(psd_sqrt(A), (m + 1,) + A.shape)
    return LinearizedSystem(m, nodes, maps, cov, root)


def gramian_path(sys: LinearizedSystem) -> np.ndarray:
    """``G(t_k) = int_0^{t_k} Phi(t_k,s) A Phi(t_k,s)^T ds`` by the trapezoid rule, all k."""
    h = sys.h
    d = sys.dimension
    G = np.zeros((sys.m + 1, d, d))
    for k in range(sys.m):
        M = sys.maps[k]
        inner = G[k] + 0.5 * h * sys.cov[k]
        G[k + 1] = M @ inner @ M.T + 0.5 * h * sys.cov[k + 1]
    return 0.5 * (G + np.swapaxes(G, 1, 2))


def controllability_gramian(spec: ModelSpec, m: int = DEFAULT_M) -> np.ndarray:
    """``G = int_0^1 Phi(1,s) A(X0(s)) Phi(1,s)^T ds`` (trapezoid on the m-grid)."""
    if m < 10:
        raise ValueError("m must be >= 10")
    return gramian_path(linearize(spec, m))[-1]


def _steer(sys: LinearizedSystem, multiplier: np.ndarray, transitions: np.ndarray, upto: int | None = None):
    """Minimal-energy control ``u(t_j) = A^{1/2} Phi(T, t_j)^T lambda`` and its trajectory."""
    m = sys.m
    d = sys.dimension
    upto = m if upto is None else upto
    u = np.zeros((m + 1, d))
    u[: upto + 1] = np.einsum("jab,jcb,c->ja", sys.root[: upto + 1], transitions[: upto + 1], multiplier)
    forcing = np.einsum("jab,jb->ja", sys.root, u)
    if upto < m:
        # keep the forcing piecewise linear up to the hitting node, zero afterwards
        forcing[upto + 1:] = 0.0
        u[upto + 1:] = 0.0
    return ControlPath(u), GridPath(sys.propagate(forcing))


def terminal_rate(spec: ModelSpec, y, m: int = DEFAULT_M, sys: LinearizedSystem | None = None) -> RateSolution:
    """Rate of ``{phi : phi(1) = y}``: ``1/2 y^T G^+ y`` (``inf`` off the range of G)."""
    if m < 10:
        raise ValueError("m must be >= 10")
    sys = sys or linearize(spec, m)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    G = gramian_path(sys)[-1]
    q = pinv_quad_form(G, y)
    diag = {"grid": sys.m, "gramian": G.tolist(), "method": "gramian"}
    if not math.isfinite(q):
        return RateSolution(math.inf, None, None, diag)
    lam = pinv(G) @ y
    u, phi = _steer(sys, lam, sys.to_end())
    diag["terminal_error"] = float(np.linalg.norm(phi.values[-1] - y))
    diag["control_cost"] = u.cost()
    return RateSolution(0.5 * q, u, phi, diag)


def halfspace_rate(spec: ModelSpec, v, c: float, m: int = DEFAULT_M,
                   sys: LinearizedSystem | None = None) -> RateSolution:
    """Rate of ``{phi : <v, phi(1)> >= c}``: ``c^2 / (2 v^T G v)`` for ``c > 0``."""
    sys = sys or linearize(spec, m)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    G = gramian_path(sys)[-1]
    d = sys.dimension
    diag = {"grid": sys.m, "gramian": G.tolist(), "method": "halfspace"}
    if c <= 0:
        return RateSolution(0.0, ControlPath.zeros(sys.m, d), GridPath(np.zeros((sys.m + 1, d))), diag)
    s = float(v @ G @ v)
    scale = max(np.linalg.eigvalsh(G).max(), 0.0) * float(v @ v)
    if s <= RANK_RTOL * scale or s <= 0.0:
        return RateSolution(math.inf, None, None, diag)
    lam = c * v / s
    u, phi = _steer(sys, lam, sys.to_end())
    diag["target"] = (G @ lam).tolist()
    diag["control_cost"] = u.cost()
    return RateSolution(c * c / (2.0 * s), u, phi, diag)


def exit_rate(spec: ModelSpec, c: float, m: int = DEFAULT_M, sys: LinearizedSystem | None = None) -> RateSolution:
    """Rate of ``{phi : max_j ||phi(t_j)|| >= c}``: ``min_k c^2 / (2 lambda_max(G(t_k)))``."""
    sys = sys or linearize(spec, m)
    d = sys.dimension
    Gs = gramian_path(sys)
    diag = {"grid": sys.m, "method": "exit"}
    if c <= 0:
        return RateSolution(0.0, ControlPath.zeros(sys.m, d), GridPath(np.zeros((sys.m + 1, d))), diag)
    lmax = np.array([np.linalg.eigvalsh(G)[-1] for G in Gs[1:]])
    k = int(np.argmax(lmax)) + 1
    if lmax[k - 1] <= 0.0:
        return RateSolution(math.inf, None, None, diag)
    eig = eigh_desc(Gs[k])
    v = eig.Q[:, 0]
    v = v if v[np.argmax(np.abs(v) > 1e-12)] > 0 else -v
    lam = c * v / eig.eigenvalues[0]
    trans = np.zeros((sys.m + 1, d, d))
    trans[k] = np.eye(d)
    for j in range(k - 1, -1, -1):
        trans[j] = trans[j + 1] @ sys.maps[j]
    u, phi = _steer(sys, lam, trans, upto=k)
    diag.update(hit_time=k / sys.m, direction=v.tolist(), control_cost=u.cost())
    return RateSolution(c * c / (2.0 * lmax[k - 1]), u, phi, diag)


# --- Laplace functional -------------------------------------------------------------

class Functional:
    """A path functional ``F`` with gradient on grid nodes.

    ``value(nodes)`` takes ``(m+1, d)`` (or batched ``(..., m+1, d)``)
    node values; ``grad(nodes)`` returns the same shape.  Functionals that
    only read ``phi(1)`` set ``terminal_only`` so samplers can skip storing
    whole paths.
    """

    terminal_only = False
    name = "custom"

    def __init__(self, value: Callable, grad: Callable | None = None, name: str = "custom"):
        self._value = value
        self._grad = grad
        self.name = name

    def value(self, nodes):
        return self._value(np.asarray(nodes, dtype=float))

    def grad(self, nodes):
        if self._grad is None:
            raise NotImplementedError("this functional has no gradient")
        return np.asarray(self._grad(np.asarray(nodes, dtype=float)), dtype=float)

    def __call__(self, path: GridPath):
        return float(self.value(path.values))


class TerminalFunctional(Functional):
    terminal_only = True

    def __init__(self, fn: Callable, dfn: Callable, name: str):
        self._fn = fn
        self._dfn = dfn
        self.name = name

    def terminal(self, y):
        return self._fn(np.asarray(y, dtype=float))

    def value(self, nodes):
        return self.terminal(np.asarray(nodes)[..., -1, :])

    def grad(self, nodes):
        nodes = np.asarray(nodes, dtype=float)
        g = np.zeros_like(nodes)
        g[..., -1, :] = self._dfn(nodes[..., -1, :])
        return g


def constant(c: float) -> TerminalFunctional:
    return TerminalFunctional(lambda y: np.full(y.shape[:-1], float(c)), lambda y: np.zeros_like(y), f"constant({c})")


def terminal_linear(v, offset: float = 0.0) -> TerminalFunctional:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return TerminalFunctional(lambda y: y @ v + offset, lambda y: np.broadcast_to(v, y.shape).copy(), "terminal_linear")


def terminal_quadratic(target, weight: float) -> TerminalFunctional:
    target = np.atleast_1d(np.asarray(target, dtype=float))
    return TerminalFunctional(
        lambda y: weight * np.sum((y - target) ** 2, axis=-1),
        lambda y: 2.0 * weight * (y - target),
        "terminal_quadratic",
    )


def terminal_threshold(v, c: float, weight: float) -> TerminalFunctional:
    """Softened indicator of missing ``{<v, phi(1)> >= c}``: ``w * max(0, c - <v, phi(1)>)^2``."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return TerminalFunctional(
        lambda y: weight * np.maximum(0.0, c - y @ v) ** 2,
        lambda y: (-2.0 * weight * np.maximum(0.0, c - y @ v))[..., None] * v,
        "terminal_threshold",
    )


def laplace_value(spec: ModelSpec, F: Functional, m: int = DEFAULT_M, max_iters: int = 10_000,
                  tol: float = 1e-6, sys: LinearizedSystem | None = None, u0=None) -> RateSolution:
    """Minimize ``1/2 int ||u||^2 + F(phi^u)`` over step controls on the m-grid.

    Gradients come from the exact discrete adjoint of the trapezoid stepping;
    steps are Barzilai-Borwein proposals safeguarded by Armijo backtracking.
    Stops when the L2 gradient norm is at most ``tol * (1 + |value|)``.
    """
    sys = sys or linearize(spec, m)
    m, d, h = sys.m, sys.dimension, sys.h
    maps, root = sys.maps, sys.root
    # phi_{j+1} = M_j phi_j + N_j u_j for u constant on [t_j, t_{j+1})
    N = 0.5 * h * (maps @ root[:-1] + root[1:])

    def forward(u):
        phi = np.zeros((m + 1, d))
        for j in range(m):
            phi[j + 1] = maps[j] @ phi[j] + N[j] @ u[j]
        return phi

    def objective(u):
        phi = forward(u)
        return 0.5 * h * float(np.sum(u * u)) + float(F.value(phi)), phi

    def gradient(u, phi):
        gF = F.grad(phi)
        p = gF[m].copy()
        g = np.empty_like(u)
        for j in range(m - 1, -1, -1):
            g[j] = u[j] + (N[j].T @ p) / h
            p = maps[j].T @ p + gF[j]
        return g

    def l2(a, b):
        return h * float(np.sum(a * b))

    u = np.zeros((m, d)) if u0 is None else np.array(u0, dtype=float)[:m]
    J, phi = objective(u)
    g = gradient(u, phi)
    gnorm = math.sqrt(l2(g, g))
    step = 1.0
    it = 0
    while gnorm > tol * (1.0 + abs(J)):
        if it >= max_iters:
            raise ConvergenceError(
                f"laplace_value did not converge in {max_iters} iterations (gradient norm {gnorm:.3e})",
                best=_laplace_solution(J, u, phi, {"iterations": it, "gradient_norm": gnorm, "grid": m}),
                grad_norm=gnorm,
            )
        t = step
        while True:
            u_new = u - t * g
            J_new, phi_new = objective(u_new)
            if J_new <= J - 1e-4 * t * gnorm**2 or t < 1e-16:
                break
            t *= 0.5
        g_new = gradient(u_new, phi_new)
        s_vec, y_vec = u_new - u, g_new - g
        sy = l2(s_vec, y_vec)
        step = l2(s_vec, s_vec) / sy if sy > 0 else 1.0
        u, J, phi, g = u_new, J_new, phi_new, g_new
        gnorm = math.sqrt(l2(g, g))
        it += 1
    return _laplace_solution(J, u, phi, {"iterations": it, "gradient_norm": gnorm, "grid": m})


def _laplace_solution(J, u, phi, diag) -> RateSolution:
    nodes = np.vstack([u, u[-1:]])
    return RateSolution(float(J), ControlPath(nodes, kind="step"), GridPath(phi), diag)
