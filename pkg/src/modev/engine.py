"""Replication engine for the tilted recursion.

Catalog models (affine or tanh drift, state-independent catalog kernel,
tilts frozen in time) run through the hot loop in ``_core``: the compiled
extension when it was built, otherwise its numpy twin ``_core_py``.  The
choice is made once at import; ``MODEV_PURE_PYTHON=1`` forces the fallback.
Everything else (custom drifts or kernels, state-feedback tilts, per-step
traces) goes through the generic vectorized path in this module.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _core_py
from .dynamics import noiseless_path
from .errors import DomainError
from .kernels import DISCRETE, GAUSS, PRODUCT, C_GAUSSIAN, C_LAPLACE, C_RADEMACHER
from .model import ModelSpec
from .rng import uniform_blocks

try:
    if os.environ.get("MODEV_PURE_PYTHON"):
        raise ImportError("pure-Python mode requested")
    from . import _core as _compiled
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
CHUNK = _core_py.CHUNK


def backend_module(name: str = "auto"):
    if name == "auto":
        return _compiled if _compiled is not None else _core_py
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled core is not available")
        return _compiled
    if name == "python":
        return _core_py
    raise ValueError(f"unknown backend {name!r}")


@dataclass
class BatchResult:
    """Per-replication summaries of the controlled recursion (index = replication)."""

    y_final: np.ndarray
    x_final: np.ndarray
    sup_y: np.ndarray
    max_w: np.ndarray
    sup_gap: np.ndarray
    loglr: np.ndarray
    paths: np.ndarray | None = None
    backend: str = ""
    trace: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.loglr.shape[0]


def supports_core(spec: ModelSpec, feedback=None) -> bool:
    return (
        feedback is None
        and spec.drift.core_params() is not None
        and spec.kernel.core_params() is not None
        and not spec.kernel.state_dependent
    )


def core_tables(kernel, alphas: np.ndarray) -> dict:
    """Per-step tables for the hot loop, computed once per schedule."""
    n, d = alphas.shape
    p = kernel.core_params()
    empty2 = np.zeros((1, 1))
    t = {
        "kernel_code": p["code"],
        "n_unif": kernel.n_uniforms,
        "root": empty2,
        "shift": np.zeros((n, d)),
        "codes": np.zeros(d, dtype=np.int64),
        "scales": np.zeros(d),
        "thr": np.zeros((n, d)),
        "rate_p": np.ones((n, d)),
        "rate_m": np.ones((n, d)),
        "atoms": empty2,
        "cdf": empty2,
    }
    if p["code"] == GAUSS:
        t["root"] = np.ascontiguousarray(p["root"])
        t["shift"] = np.ascontiguousarray(alphas @ p["cov"])
    elif p["code"] == PRODUCT:
        s = p["scales"]
        sa = s * alphas
        codes = p["codes"]
        t["codes"] = np.ascontiguousarray(codes, dtype=np.int64)
        t["scales"] = np.ascontiguousarray(s)
        thr = np.zeros((n, d))
        rad = codes == C_RADEMACHER
        lap = codes == C_LAPLACE
        gau = codes == C_GAUSSIAN
        thr[:, rad] = 0.5 * (1.0 + np.tanh(sa[:, rad]))
        thr[:, lap] = 0.5 * (1.0 + sa[:, lap])
        t["thr"] = thr
        shift = np.zeros((n, d))
        shift[:, gau] = s[gau] * sa[:, gau]
        t["shift"] = shift
        rp, rm = np.ones((n, d)), np.ones((n, d))
        rp[:, lap] = (1.0 - sa[:, lap]) / s[lap]
        rm[:, lap] = (1.0 + sa[:, lap]) / s[lap]
        t["rate_p"], t["rate_m"] = rp, rm
    elif p["code"] == DISCRETE:
        t["atoms"] = np.ascontiguousarray(p["atoms"])
        t["cdf"] = np.ascontiguousarray(np.cumsum(kernel.tilted_probs(alphas), axis=1))
    return t


def check_tilts(spec: ModelSpec, alphas) -> None:
    norms = np.linalg.norm(np.atleast_2d(alphas), axis=-1)
    bad = np.flatnonzero(~(norms < spec.kernel.mgf_radius))
    if bad.size:
        i = int(bad[0])
        raise DomainError(f"tilt at step {i} has norm {norms[i]:.6g}, outside mgf radius {spec.kernel.mgf_radius:.6g}")


def run_batch(
    spec: ModelSpec,
    alphas: np.ndarray,
    n: int,
    N: int,
    seed: int,
    *,
    feedback: Callable | None = None,
    phi: np.ndarray | None = None,
    store_paths: bool = False,
    threads: int = 1,
    backend: str = "auto",
    first_rep: int = 0,
    record: bool = False,
) -> BatchResult:
    """Simulate replications ``first_rep .. first_rep + N - 1`` of the tilted recursion.

    ``alphas`` holds one tilt per step (``(n, d)``); ``feedback(i, xbar)``,
    when given, overrides it with state-dependent tilts.  ``phi`` (``(n+1, d)``
    node values) enables the sup-distance diagnostic.
    """
    d = spec.dimension
    alphas = np.array(np.broadcast_to(np.asarray(alphas, dtype=float), (n, d)), order="C")
    if feedback is None:
        check_tilts(spec, alphas)
    reps = np.arange(first_rep, first_rep + N, dtype=np.int64)
    xn0 = noiseless_path(spec, n).values
    bn0 = np.ascontiguousarray(spec.drift(xn0[:-1]))
    c1 = spec.a(n) / np.sqrt(n)
    out = BatchResult(
        y_final=np.zeros((N, d)),
        x_final=np.zeros((N, d)),
        sup_y=np.zeros(N),
        max_w=np.zeros(N),
        sup_gap=np.zeros(N),
        loglr=np.zeros(N),
        paths=np.zeros((N, n + 1, d)) if store_paths else None,
    )
    phi_arr = np.ascontiguousarray(phi, dtype=float) if phi is not None else np.zeros((1, d))
    if phi is not None and phi_arr.shape != (n + 1, d):
        raise ValueError(f"phi must have shape {(n + 1, d)}")

    if supports_core(spec, feedback) and not record and backend != "generic":
        mod = backend_module(backend)
        dp = spec.drift.core_params()
        tab = core_tables(spec.kernel, alphas)
        wmean = np.ascontiguousarray(spec.kernel.tilt_mean(None, alphas))
        hsum = float(np.sum(spec.kernel.log_mgf(None, alphas)))
        mod.run_catalog(
            reps, int(seed), int(n), float(c1), np.ascontiguousarray(spec.x0), bn0,
            int(dp["code"]), np.ascontiguousarray(dp["B"]), np.ascontiguousarray(dp["c"]),
            np.ascontiguousarray(dp["kappa"]), int(tab["kernel_code"]), int(tab["n_unif"]),
            tab["root"], tab["shift"], tab["codes"], tab["scales"], tab["thr"], tab["rate_p"],
            tab["rate_m"], tab["atoms"], tab["cdf"], alphas, wmean, hsum, phi_arr,
            int(phi is not None), out.paths if store_paths else np.zeros((1, 1, 1)), int(store_paths),
            out.y_final, out.x_final, out.sup_y, out.max_w, out.sup_gap, out.loglr, int(threads),
        )
        out.backend = "compiled" if mod is _compiled else "python"
    else:
        _run_generic(spec, alphas, feedback, n, reps, seed, c1, xn0, bn0, phi, out, threads, record)
        out.backend = "generic"
    if store_paths:
        out.paths[:, 0, :] = 0.0
    return out


class _Source:
    """Uniform rows for one step: prefetched block first, then fresh counter blocks."""

    def __init__(self, seed, reps, step, prefetched):
        self.seed, self.reps, self.step = seed, reps, step
        self.prefetched = prefetched
        self.offset = 0

    def __call__(self, width: int) -> np.ndarray:
        blocks = (width + 1) // 2
        if self.offset == 0 and self.prefetched is not None and self.prefetched.shape[1] >= width:
            u = self.prefetched[:, :width]
        else:
            u = uniform_blocks(self.seed, self.reps, [self.step], blocks, block_start=self.offset)[:, 0, :width]
        self.offset += blocks
        return u


def _run_generic(spec, alphas, feedback, n, reps, seed, c1, xn0, bn0, phi, out, threads, record):
    kernel, drift = spec.kernel, spec.drift
    d = spec.dimension
    blocks = (kernel.n_uniforms + 1) // 2
    inv_n = 1.0 / n
    starts = list(range(0, len(reps), CHUNK))
    if record:
        out.trace = {
            "xbar": np.zeros((len(reps), n + 1, d)),
            "ybar": np.zeros((len(reps), n + 1, d)),
            "noise": np.zeros((len(reps), n, d)),
            "alpha": np.zeros((len(reps), n, d)),
            "loglr_inc": np.zeros((len(reps), n)),
            "w": np.zeros((len(reps), n, d)),
        }

    def work(start):
        sl = slice(start, min(start + CHUNK, len(reps)))
        rr = reps[sl]
        R = len(rr)
        x = np.tile(spec.x0, (R, 1))
        y = np.zeros((R, d))
        W = np.zeros((R, d))
        lr = np.zeros(R)
        best_y = np.zeros(R)
        best_w = np.zeros(R)
        best_g = np.full(R, float(np.linalg.norm(phi[0])) if phi is not None else 0.0)
        if record:
            out.trace["xbar"][sl, 0] = x
        for i0 in range(0, n, _core_py.STEP_BLOCK):
            steps = np.arange(i0, min(i0 + _core_py.STEP_BLOCK, n))
            U = uniform_blocks(seed, rr, steps, blocks)
            for k, i in enumerate(steps):
                if feedback is not None:
                    alpha = np.broadcast_to(np.asarray(feedback(i, x), dtype=float), (R, d))
                    check_tilts(spec, alpha)
                else:
                    alpha = np.broadcast_to(alphas[i], (R, d))
                noise = kernel.draw(x, alpha, _Source(seed, rr, i, U[:, k, :]))
                H = np.broadcast_to(kernel.log_mgf(x, alpha), (R,))
                w = np.broadcast_to(kernel.tilt_mean(x, alpha), (R, d))
                bx = drift(x)
                inc = H - np.sum(noise * alpha, axis=1)
                lr = lr + inc
                y = y + c1 * (bx - bn0[i]) + c1 * noise
                x = x + (bx + noise) * inv_n
                W = W + c1 * (noise - w)
                best_y = np.maximum(best_y, np.linalg.norm(y, axis=1))
                best_w = np.maximum(best_w, np.linalg.norm(W, axis=1))
                if phi is not None:
                    best_g = np.maximum(best_g, np.linalg.norm(y - phi[i + 1], axis=1))
                if out.paths is not None:
                    out.paths[sl, i + 1] = y
                if record:
                    tr = out.trace
                    tr["xbar"][sl, i + 1] = x
                    tr["ybar"][sl, i + 1] = y
                    tr["noise"][sl, i] = noise
                    tr["alpha"][sl, i] = alpha
                    tr["loglr_inc"][sl, i] = inc
                    tr["w"][sl, i] = w
        out.y_final[sl] = y
        out.x_final[sl] = x
        out.sup_y[sl] = best_y
        out.max_w[sl] = best_w
        out.sup_gap[sl] = best_g
        out.loglr[sl] = lr

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for s in starts:
            work(s)
