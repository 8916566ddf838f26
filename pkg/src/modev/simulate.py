"""Simulation of ``Y^n`` and of the tilted pair ``(Xbar, Ybar)``, with the usual diagnostics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import GridPath, noiseless_path
from .engine import run_batch
from .model import ModelSpec
from .schedule import ControlSchedule


@dataclass
class PathCollection:
    """``N`` grid paths on ``t_i = i/n`` stored as one ``(N, n+1, d)`` array."""

    values: np.ndarray

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, j) -> GridPath:
        return GridPath(self.values[j])

    def __iter__(self):
        return (GridPath(v) for v in self.values)

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1, :]


@dataclass
class StepPath:
    """Right-continuous step function: ``values[i]`` on ``[i/n, (i+1)/n)``, last value at ``t=1``."""

    values: np.ndarray  # (n, d)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > 1):
            raise ValueError("t must lie in [0, 1]")
        i = np.minimum(np.floor(t * self.n + 1e-12).astype(int), self.n - 1)
        return self.values[i]


@dataclass
class ControlledTrajectory:
    xbar: np.ndarray        # (n+1, d)
    ybar: np.ndarray        # (n+1, d)
    noise: np.ndarray       # (n, d)
    alpha: np.ndarray       # (n, d)
    loglr_inc: np.ndarray   # (n,)
    w: np.ndarray           # (n, d) tilted means
    x_ref: np.ndarray       # (n+1, d) noiseless recursion
    a: float
    seed: int = 0
    replication: int = 0

    @property
    def n(self) -> int:
        return self.noise.shape[0]

    @property
    def path(self) -> GridPath:
        return GridPath(self.ybar)

    def identity_gap(self) -> float:
        """``max_i ||Ybar_i - a sqrt(n) (Xbar_i - X^{n,0}_i)||``."""
        amp = self.a * math.sqrt(self.n)
        return float(np.max(np.abs(self.ybar - amp * (self.xbar - self.x_ref))))

    def to_csv(self, fh=None) -> str | None:
        """Rows ``step, xbar*, ybar*, noise*, tilt*, loglr_inc``; the final row has no noise."""
        own = fh is None
        if own:
            fh = io.StringIO()
        d = self.xbar.shape[1]
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["step"] + [f"xbar{k}" for k in range(d)] + [f"ybar{k}" for k in range(d)]
                    + [f"noise{k}" for k in range(d)] + [f"tilt{k}" for k in range(d)] + ["loglr_inc"])
        fmt = lambda v: f"{v:.10g}"  # noqa: E731
        for i in range(self.n + 1):
            row = [str(i)] + [fmt(v) for v in self.xbar[i]] + [fmt(v) for v in self.ybar[i]]
            if i < self.n:
                row += [fmt(v) for v in self.noise[i]] + [fmt(v) for v in self.alpha[i]] + [fmt(self.loglr_inc[i])]
            else:
                row += [""] * (2 * d + 1)
            wr.writerow(row)
        return fh.getvalue() if own else None


def simulate_y(spec: ModelSpec, n: int, N: int, seed: int, threads: int = 1) -> PathCollection:
    """``N`` independent copies of ``Y^n`` on its natural grid."""
    if n < 1 or N < 1:
        raise ValueError("n and N must be >= 1")
    res = run_batch(spec, np.zeros((n, spec.dimension)), n, N, seed, store_paths=True, threads=threads)
    return PathCollection(res.paths)


def simulate_controlled(spec: ModelSpec, schedule: ControlSchedule, n: int, seed: int,
                        replication: int = 0) -> ControlledTrajectory:
    """One tilted trajectory, drawing with the same counters as the batch engine."""
    if schedule.n != n:
        raise ValueError(f"schedule has {schedule.n} steps, expected {n}")
    res = run_batch(spec, schedule.alphas, n, 1, seed, feedback=schedule.feedback,
                    first_rep=replication, record=True)
    tr = res.trace
    return ControlledTrajectory(
        xbar=tr["xbar"][0], ybar=tr["ybar"][0], noise=tr["noise"][0], alpha=tr["alpha"][0],
        loglr_inc=tr["loglr_inc"][0], w=tr["w"][0], x_ref=noiseless_path(spec, n).values,
        a=spec.a(n), seed=seed, replication=replication,
    )


def conditional_mean_path(spec: ModelSpec, schedule: ControlSchedule, trajectory: ControlledTrajectory):
    """``(w^n, a(n) sqrt(n) w^n)`` as step functions."""
    w = np.asarray(spec.kernel.tilt_mean(trajectory.xbar[:-1], trajectory.alpha), dtype=float)
    w = np.broadcast_to(w, trajectory.alpha.shape).copy()
    return StepPath(w), StepPath(spec.amplification(trajectory.n) * w)


def martingale_residual(trajectory: ControlledTrajectory, spec: ModelSpec, n: int) -> float:
    """``max_{i<=n} ||(a(n)/sqrt(n)) sum_{j<i} (noise_j - w_j)||``."""
    c1 = spec.a(n) / math.sqrt(n)
    W = np.cumsum(c1 * (trajectory.noise - trajectory.w), axis=0)
    return float(max(0.0, np.max(np.linalg.norm(W, axis=1))))


def control_cost(spec: ModelSpec, schedule: ControlSchedule, trajectory: ControlledTrajectory) -> float:
    """``a(n)^2 sum_i R(eta_i || mu_{Xbar_i})`` from the exponential-family identity."""
    R = spec.kernel.relative_entropy(trajectory.xbar[:-1], trajectory.alpha)
    R = np.broadcast_to(R, (trajectory.n,))
    return trajectory.a ** 2 * math.fsum(R.tolist())


def mean_tail(what: StepPath, C: float) -> float:
    """``int 1{||w_hat|| > C} ||w_hat|| dt``, an integrability diagnostic for the amplified means."""
    norms = np.linalg.norm(what.values, axis=1)
    return float(np.sum(np.where(norms > C, norms, 0.0)) / what.n)


def simulate_batch(spec: ModelSpec, schedule: ControlSchedule, n: int, N: int, seed: int, *,
                   phi: GridPath | None = None, threads: int = 1):
    """Per-replication summaries (terminal values, ``max ||W||``, sup-distance to ``phi``)."""
    phi_nodes = None if phi is None else phi(np.arange(n + 1) / n)
    return run_batch(spec, schedule.alphas, n, N, seed, feedback=schedule.feedback, phi=phi_nodes,
                     threads=threads)


def replay(spec: ModelSpec, schedule: ControlSchedule, noises) -> ControlledTrajectory:
    """Run the tilted recursion on a prescribed noise sequence (no sampling)."""
    noises = np.atleast_2d(np.asarray(noises, dtype=float))
    n, d = noises.shape
    if schedule.n != n:
        raise ValueError(f"schedule has {schedule.n} steps, got {n} noises")
    x_ref = noiseless_path(spec, n).values
    c1 = spec.a(n) / math.sqrt(n)
    xbar = np.empty((n + 1, d))
    ybar = np.zeros((n + 1, d))
    alpha = np.empty((n, d))
    w = np.empty((n, d))
    inc = np.empty(n)
    xbar[0] = spec.x0
    bref = spec.drift(x_ref[:-1])
    for i in range(n):
        x = xbar[i]
        al = schedule.alphas[i] if schedule.feedback is None else schedule.feedback(i, x[None, :])[0]
        alpha[i] = al
        w[i] = spec.kernel.tilt_mean(x, al)
        inc[i] = float(spec.kernel.log_mgf(x, al)) - float(noises[i] @ al)
        bx = spec.drift(x)
        ybar[i + 1] = ybar[i] + c1 * (bx - bref[i]) + c1 * noises[i]
        xbar[i + 1] = x + (bx + noises[i]) / n
    return ControlledTrajectory(xbar, ybar, noises, alpha, inc, w, x_ref, spec.a(n))
