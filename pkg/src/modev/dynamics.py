"""Deterministic paths: the noiseless recursion, the law-of-large-numbers ODE and its linearization."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ModelError
from .model import ModelSpec


@dataclass
class GridPath:
    """Node values on ``t_j = j/m``, ``j = 0..m``, read with piecewise-linear interpolation."""

    values: np.ndarray  # (m + 1, d)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] < 2:
            raise ValueError("a grid path needs at least two nodes")
        self.values = v

    @property
    def m(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.m + 1) / self.m

    def __call__(self, t):
        return interpolate(self, t)

    def sup_norm(self) -> float:
        # max over t of a piecewise-linear path is attained at a node
        return float(np.max(np.linalg.norm(self.values, axis=1)))

    def to_csv(self, fh=None) -> str | None:
        """Write ``t, v0, v1, ...`` rows; returns the text if no handle is given."""
        own = fh is None
        if own:
            fh = io.StringIO()
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"v{k}" for k in range(self.dimension)])
        for t, row in zip(self.times, self.values):
            w.writerow([f"{t:.10g}"] + [f"{v:.10g}" for v in row])
        return fh.getvalue() if own else None


def interpolate(path: GridPath, t):
    """``(i + 1 - m t) v_i + (m t - i) v_{i+1}`` for ``t`` in ``[i/m, (i+1)/m]``."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise ValueError(f"t must lie in [0, 1], got {t}")
    m = path.m
    mt = t_arr * m
    i = np.minimum(np.floor(mt).astype(int), m - 1)
    frac = (mt - i)[..., None]
    out = (1.0 - frac) * path.values[i] + frac * path.values[i + 1]
    # exact node values, no rounding from the convex combination
    on_node = np.isclose(mt, np.round(mt), rtol=0.0, atol=1e-12)
    if np.any(on_node):
        out = np.where(on_node[..., None], path.values[np.round(mt).astype(int)], out)
    return out


def noiseless_path(spec: ModelSpec, n: int) -> GridPath:
    """Euler recursion ``X_{i+1} = X_i + b(X_i)/n`` from ``x0``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x = np.empty((n + 1, spec.dimension))
    x[0] = spec.x0
    for i in range(n):
        bx = spec.drift(x[i])
        if not np.all(np.isfinite(bx)):
            raise ModelError(f"non-finite drift at step {i}")
        x[i + 1] = x[i] + bx / n
    return GridPath(x)


def _rk4(spec: ModelSpec, steps: int) -> np.ndarray:
    x = np.empty((steps + 1, spec.dimension))
    x[0] = spec.x0
    h = 1.0 / steps
    b = spec.drift
    for j in range(steps):
        xj = x[j]
        k1 = b(xj)
        k2 = b(xj + 0.5 * h * k1)
        k3 = b(xj + 0.5 * h * k2)
        k4 = b(xj + h * k3)
        x[j + 1] = xj + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x[j + 1])):
            raise ModelError(f"non-finite drift while integrating X0 near t={j * h:.6g}")
    return x


def lln_limit(spec: ModelSpec, m: int) -> GridPath:
    """``X0' = b(X0)`` by classical RK4 on ``m`` steps (global error ``O(m^-4)``)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return GridPath(_rk4(spec, m))


def lln_nodes_and_midpoints(spec: ModelSpec, m: int) -> tuple[np.ndarray, np.ndarray]:
    """``X0`` at ``t_j`` and at ``t_j + 1/(2m)``, from RK4 on the ``2m`` grid."""
    fine = _rk4(spec, 2 * m)
    return fine[0::2], fine[1::2]


def step_maps(spec: ModelSpec, m: int, nodes=None, mids=None) -> np.ndarray:
    """One RK4 step of ``Phi' = Db(X0) Phi`` over each ``[t_j, t_{j+1}]``: ``(m, d, d)``."""
    if nodes is None:
        nodes, mids = lln_nodes_and_midpoints(spec, m)
    h = 1.0 / m
    D0 = spec.drift.jacobian(nodes[:-1])
    Dm = spec.drift.jacobian(mids)
    D1 = spec.drift.jacobian(nodes[1:])
    eye = np.eye(spec.dimension)
    k1 = D0
    k2 = Dm @ (eye + 0.5 * h * k1)
    k3 = Dm @ (eye + 0.5 * h * k2)
    k4 = D1 @ (eye + h * k3)
    return eye + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def transitions_to_end(maps: np.ndarray) -> np.ndarray:
    """``Phi(1, t_j)`` for every node, as backward products of the step maps."""
    m, d, _ = maps.shape
    out = np.empty((m + 1, d, d))
    out[m] = np.eye(d)
    for j in range(m - 1, -1, -1):
        out[j] = out[j + 1] @ maps[j]
    return out


def transition_matrix(spec: ModelSpec, x0_path: GridPath, s: float, t: float) -> np.ndarray:
    """``Phi(t, s)``: fundamental solution of ``Y' = Db(X0(t)) Y`` with ``Phi(s, s) = I``.

    The state and the matrix are integrated jointly with RK4, on steps aligned
    with the grid of ``x0_path``; the path supplies ``X0`` at grid nodes.
    """
    if s > t:
        raise ValueError(f"need s <= t, got s={s}, t={t}")
    if not (0.0 <= s and t <= 1.0):
        raise ValueError("s and t must lie in [0, 1]")
    d = spec.dimension
    eye = np.eye(d)
    if s == t:
        return eye
    m = x0_path.m
    j = int(np.floor(s * m + 1e-12))
    x = x0_path.values[min(j, m)].copy()
    tau = j / m
    if s - tau > 1e-14:
        x, _ = _aug_step(spec, x, eye, s - tau)
    phi = eye.copy()
    cur = s
    while t - cur > 1e-14:
        nxt = min((np.floor(cur * m + 1e-9) + 1) / m, t)
        x, phi = _aug_step(spec, x, phi, nxt - cur)
        cur = nxt
    return phi


def _aug_step(spec, x, phi, h):
    b, J = spec.drift, spec.drift.jacobian
    k1x, k1p = b(x), J(x) @ phi
    x2, p2 = x + 0.5 * h * k1x, phi + 0.5 * h * k1p
    k2x, k2p = b(x2), J(x2) @ p2
    x3, p3 = x + 0.5 * h * k2x, phi + 0.5 * h * k2p
    k3x, k3p = b(x3), J(x3) @ p3
    x4, p4 = x + h * k3x, phi + h * k3p
    k4x, k4p = b(x4), J(x4) @ p4
    return (x + (h / 6) * (k1x + 2 * k2x + 2 * k3x + k4x),
            phi + (h / 6) * (k1p + 2 * k2p + 2 * k3p + k4p))


def default_lln_grid(n_max: int) -> int:
    """``max(1000, 10 n_max)`` rounded up to a multiple of ``n_max`` so the ``i/n`` nodes lie on it."""
    n_max = max(int(n_max), 1)
    return n_max * max(10, -(-1000 // n_max))
