"""Importance sampling with the exponential-tilt change of measure.

Estimators average ``f(Ybar) exp(logLR)`` over replications of the tilted
recursion, where ``logLR = sum_i H_c(Xbar_i, alpha_i) - <noise_i, alpha_i>``
is ``log dP/dQ`` along the path.  Tilts come from a control ``u``; by
default the rate-function minimizer for the event or functional.
"""

from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import ratefn
from .engine import BatchResult, run_batch
from .errors import ConfigError, DegenerateEstimateError
from .model import ModelSpec
from .ratefn import ControlPath, Functional, RateSolution
from .schedule import ControlSchedule, default_K, tilt_schedule_from_control
from .simulate import ControlledTrajectory

Z95 = 1.96


# --- events -----------------------------------------------------------------------

class Event:
    """A grid-measurable set of paths.

    Subclasses read the batch summaries (terminal value, running max of
    ``||Y||``) so whole paths need not be stored; ``PathEvent`` wraps an
    arbitrary predicate and forces path storage.
    """

    needs_paths = False
    text = "event"

    def indicator(self, batch: BatchResult) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, path) -> bool:
        raise NotImplementedError

    def rate(self, spec: ModelSpec, m: int = ratefn.DEFAULT_M) -> RateSolution:
        raise NotImplementedError(f"no rate available for {self.text}")

    def __str__(self):
        return self.text


class HalfspaceEvent(Event):
    """``{<v, Y(1)> >= c}``."""

    def __init__(self, v, c: float, text: str | None = None):
        self.v = np.atleast_1d(np.asarray(v, dtype=float))
        self.c = float(c)
        self.text = text or "halfspace " + ",".join(f"{x:g}" for x in self.v) + f",{self.c:g}"

    def indicator(self, batch):
        return batch.y_final @ self.v >= self.c

    def __call__(self, path):
        return bool(path.values[-1] @ self.v >= self.c)

    def rate(self, spec, m=ratefn.DEFAULT_M):
        return ratefn.halfspace_rate(spec, self.v, self.c, m)


def terminal_event(c: float, direction: str = ">=", d: int = 1, component: int = 0) -> HalfspaceEvent:
    """``{Y_k(1) >= c}`` or ``{Y_k(1) <= c}`` as a half-space."""
    e = np.zeros(d)
    e[component] = 1.0
    if direction == ">=":
        return HalfspaceEvent(e, c, f"terminal>={c:g}")
    if direction == "<=":
        return HalfspaceEvent(-e, -c, f"terminal<={c:g}")
    raise ValueError(f"unknown direction {direction!r}")


class SupNormEvent(Event):
    """``{max_i ||Y(t_i)|| >= c}``."""

    def __init__(self, c: float):
        self.c = float(c)
        self.text = f"supnorm>={self.c:g}"

    def indicator(self, batch):
        return batch.sup_y >= self.c

    def __call__(self, path):
        return bool(path.sup_norm() >= self.c)

    def rate(self, spec, m=ratefn.DEFAULT_M):
        return ratefn.exit_rate(spec, self.c, m)


class WholeSpace(Event):
    text = "all"

    def indicator(self, batch):
        return np.ones(batch.N, dtype=bool)

    def __call__(self, path):
        return True

    def rate(self, spec, m=ratefn.DEFAULT_M):
        d = spec.dimension
        return RateSolution(0.0, ControlPath.zeros(m, d), None, {"grid": m})


class PathEvent(Event):
    """Arbitrary predicate on the ``Y^n`` grid path."""

    needs_paths = True

    def __init__(self, predicate, text: str = "path-predicate"):
        self.predicate = predicate
        self.text = text

    def indicator(self, batch):
        from .dynamics import GridPath

        return np.array([bool(self.predicate(GridPath(p))) for p in batch.paths])

    def __call__(self, path):
        return bool(self.predicate(path))


_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"


def parse_event(text: str, d: int = 1) -> Event:
    """``terminal>=c``, ``terminal<=c``, ``halfspace v1,...,vd,c`` or ``supnorm>=c``."""
    s = text.strip()
    m = re.fullmatch(rf"terminal\s*(>=|<=)\s*({_NUM})", s)
    if m:
        return terminal_event(float(m.group(2)), m.group(1), d)
    m = re.fullmatch(rf"supnorm\s*>=\s*({_NUM})", s)
    if m:
        return SupNormEvent(float(m.group(1)))
    m = re.fullmatch(r"halfspace\s+(.+)", s)
    if m:
        try:
            nums = [float(x) for x in m.group(1).split(",")]
        except ValueError:
            nums = []
        if len(nums) != d + 1:
            raise ConfigError(f"halfspace needs {d} direction entries and a level, got {m.group(1)!r}")
        return HalfspaceEvent(nums[:d], nums[d])
    raise ConfigError(f"cannot parse event {text!r}; expected terminal>=c, terminal<=c, "
                      "halfspace v1,...,vd,c or supnorm>=c")


# --- estimates -------------------------------------------------------------------------

@dataclass
class ISEstimate:
    estimate: float
    variance: float          # sample variance of the weighted values
    stderr: float
    ci_halfwidth: float
    rel_error: float
    ess: float
    N: int
    n: int
    seed: int
    fingerprint: str = ""
    degenerate: bool = False
    approximate_ci: bool = False
    kind: str = "probability"
    mean_weight: float = float("nan")
    weight_stderr: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def ci(self) -> tuple[float, float]:
        return self.estimate - self.ci_halfwidth, self.estimate + self.ci_halfwidth

    def covers(self, truth: float) -> bool:
        lo, hi = self.ci
        return lo <= truth <= hi

    def to_dict(self) -> dict:
        out = asdict(self)
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in out.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _summaries(logw):
    """Effective sample size and mean/stderr of the likelihood-ratio weights."""
    N = logw.shape[0]
    w = np.exp(logw)
    ess = float(math.exp(2.0 * logsumexp(logw) - logsumexp(2.0 * logw))) if N else 0.0
    mw = float(np.mean(w))
    sw = float(np.std(w, ddof=1) / math.sqrt(N)) if N > 1 else float("nan")
    return min(ess, float(N)), mw, sw


def _weighted_estimate(values: np.ndarray, logw: np.ndarray, n, seed, fp, kind="probability") -> ISEstimate:
    N = values.shape[0]
    est = float(np.mean(values))
    var = float(np.var(values, ddof=1)) if N > 1 else float("nan")
    se = math.sqrt(var / N) if N > 1 else float("nan")
    ess, mw, sw = _summaries(logw)
    degenerate = not np.any(values != 0)
    if degenerate:
        warnings.warn("all weighted indicators are zero; the confidence interval is degenerate", RuntimeWarning)
    rel = se / est if est > 0 else float("inf")
    return ISEstimate(est, var, se, Z95 * se, rel, ess, N, n, seed, fp, degenerate, False, kind, mw, sw)


def resolve_control(spec: ModelSpec, target, u: ControlPath | None, m: int = ratefn.DEFAULT_M):
    """The control to tilt with: ``u`` if given, else the rate minimizer for ``target``."""
    if u is not None:
        return u
    if isinstance(target, Event):
        sol = target.rate(spec, m)
    else:
        sol = ratefn.laplace_value(spec, target, m)
    return sol.control if sol.control is not None else ControlPath.zeros(m, spec.dimension)


def _schedule(spec, u, K, n, feedback):
    K = default_K(u) if K is None else float(K)
    return tilt_schedule_from_control(spec, u, K, n, feedback=feedback)


def is_probability(spec: ModelSpec, event: Event, u: ControlPath | None, K: float | None, n: int, N: int,
                   seed: int, *, threads: int = 1, feedback: bool = False, backend: str = "auto",
                   schedule: ControlSchedule | None = None) -> ISEstimate:
    """Importance-sampling estimate of ``P(Y^n in event)``."""
    if N < 2:
        raise ValueError("N must be >= 2")
    if schedule is None:
        schedule = _schedule(spec, resolve_control(spec, event, u), K, n, feedback)
    batch = run_batch(spec, schedule.alphas, n, N, seed, feedback=schedule.feedback,
                      store_paths=event.needs_paths, threads=threads, backend=backend)
    hit = event.indicator(batch)
    vals = np.where(hit, np.exp(batch.loglr), 0.0)
    return _weighted_estimate(vals, batch.loglr, n, seed, schedule.fingerprint(seed))


def vanilla_probability(spec: ModelSpec, event: Event, n: int, N: int, seed: int, threads: int = 1) -> ISEstimate:
    """Plain Monte Carlo (zero tilt) for comparison."""
    sched = ControlSchedule.zero(spec, n)
    return is_probability(spec, event, None, None, n, N, seed, threads=threads, schedule=sched)


def is_laplace(spec: ModelSpec, F: Functional, u: ControlPath | None, K: float | None, n: int, N: int,
               seed: int, *, threads: int = 1, feedback: bool = False, backend: str = "auto",
               schedule: ControlSchedule | None = None) -> ISEstimate:
    """Estimate of ``-a(n)^2 log E exp(-F(Y^n)/a(n)^2)``; delta-method interval.

    Works in log space, so very small or very large inner means do not
    under- or overflow.
    """
    if N < 2:
        raise ValueError("N must be >= 2")
    if schedule is None:
        schedule = _schedule(spec, resolve_control(spec, F, u), K, n, feedback)
    needs_paths = not getattr(F, "terminal_only", False)
    batch = run_batch(spec, schedule.alphas, n, N, seed, feedback=schedule.feedback,
                      store_paths=needs_paths, threads=threads, backend=backend)
    a2 = spec.a(n) ** 2
    if needs_paths:
        Fv = np.asarray(F.value(batch.paths), dtype=float)
    else:
        Fv = np.asarray(F.terminal(batch.y_final), dtype=float)
    logv = -Fv / a2 + batch.loglr
    top = float(np.max(logv))
    if not math.isfinite(top):
        raise DegenerateEstimateError("inner Laplace estimate is not positive")
    scaled = np.exp(logv - top)
    mean_s = float(np.mean(scaled))
    if mean_s <= 0:
        raise DegenerateEstimateError("inner Laplace estimate is not positive")
    log_mean = top + math.log(mean_s)
    sd_s = float(np.std(scaled, ddof=1))
    rel_inner = sd_s / (math.sqrt(N) * mean_s)
    value = -a2 * log_mean
    se = a2 * rel_inner
    ess, mw, sw = _summaries(batch.loglr)
    var = se * se * N
    rel = se / abs(value) if value != 0 else (0.0 if se == 0 else float("inf"))
    return ISEstimate(value, var, se, Z95 * se, rel, ess, N, n, seed, schedule.fingerprint(seed), False, True,
                      "laplace", mw, sw, {"log_inner_mean": log_mean, "inner_rel_error": rel_inner})


def sample_tilted(kernel, x, alpha, stream, size: int = 1) -> np.ndarray:
    """Exact draws from ``eta(dy) ~ exp(<y, alpha>) mu_x(dy)``."""
    return kernel.tilted_sampler(x, alpha, stream, size)


def log_likelihood_ratio(trajectory: ControlledTrajectory) -> float:
    """``sum_i H_c(Xbar_i, alpha_i) - <noise_i, alpha_i>`` (``log dP/dQ`` along the path)."""
    return math.fsum(np.asarray(trajectory.loglr_inc, dtype=float).tolist())
