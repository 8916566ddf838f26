"""Command-line front end: ``modev {validate,simulate,rate,laplace,estimate,ladder}``.

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import difflib
import json
import math
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import harness, importance, ratefn
from .errors import ConfigError, ConvergenceError, DegenerateEstimateError, DomainError, ModelError
from .model import get_model, validate_model
from .ratefn import ControlPath
from .schedule import ControlSchedule, default_K, tilt_schedule_from_control
from .simulate import simulate_controlled, simulate_y

TASKS = ("validate", "simulate", "rate", "laplace", "estimate", "ladder")
DEFAULT_SEED = 0
DEFAULT_N = {"simulate": 1000, "estimate": 10_000, "ladder": 100_000}


@dataclass
class RunConfig:
    task: str
    model: str | None = None
    gamma: float = 0.25
    n: int | None = None
    N: int | None = None
    K: float | None = None          # None means auto (10 max ||u||)
    seed: int = DEFAULT_SEED
    event: str | None = None
    target: list | None = None
    functional: str | None = None
    u: list | None = None
    n_list: list | None = None
    m: int = ratefn.DEFAULT_M
    out: str | None = None
    format: str = "csv"
    json: bool = False
    dump: str | None = None
    threads: int = 1
    backend: str = "auto"
    timings: bool = False


CONFIG_KEYS = {f.name for f in fields(RunConfig)}
REQUIRED = {
    "validate": [("model",)],
    "simulate": [("model",), ("n",)],
    "rate": [("model",), ("target", "event")],
    "laplace": [("model",), ("functional",)],
    "estimate": [("model",), ("n",), ("event", "functional")],
    "ladder": [("model",), ("event", "functional")],
}


def _floats(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    if isinstance(text, (int, float)):
        return [float(text)]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modev", description=__doc__.splitlines()[0])
    p.add_argument("task", choices=TASKS)
    p.add_argument("--config", help="JSON file with run parameters (flags override it)")
    p.add_argument("--model", help="catalog id or path to a model JSON file")
    p.add_argument("--gamma", type=float)
    p.add_argument("--n", dest="n", type=int)
    p.add_argument("--N", dest="N", type=int)
    p.add_argument("--K", dest="K", help="truncation level or 'auto'")
    p.add_argument("--seed", type=int)
    p.add_argument("--event", help="terminal>=c | terminal<=c | 'halfspace v1,...,vd,c' | supnorm>=c")
    p.add_argument("--target", help="terminal target y (comma-separated) for the rate task")
    p.add_argument("--functional", help="'linear v1,...,vd' | 'quadratic y1,...,yd,w' | "
                                        "'threshold v1,...,vd,c,w' | 'constant c'")
    p.add_argument("--u", help="constant control (comma-separated); default is the rate minimizer")
    p.add_argument("--n-list", dest="n_list", help="ladder rungs, comma-separated")
    p.add_argument("--m", type=int, help="grid size for rate computations")
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--json", action="store_true", default=None, help="print one JSON object on stdout")
    p.add_argument("--dump", help="write one controlled trajectory to this CSV file")
    p.add_argument("--threads", type=int)
    p.add_argument("--backend", choices=("auto", "compiled", "python", "generic"))
    p.add_argument("--timings", action="store_true", default=None, help="record wall-clock seconds in reports")
    return p


def _coerce(key: str, value):
    if value is None:
        return None
    try:
        if key in ("n", "N", "seed", "threads", "m"):
            return int(value)
        if key == "gamma":
            return float(value)
        if key == "K":
            return None if str(value).lower() == "auto" else float(value)
        if key in ("target", "u"):
            return _floats(value)
        if key == "n_list":
            return [int(v) for v in _floats(value)]
        if key in ("json", "timings"):
            return bool(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    return value


def parse_config(argv=None) -> RunConfig:
    """Resolve flags and an optional JSON file into a :class:`RunConfig`."""
    ns = build_parser().parse_args(argv)
    doc: dict = {}
    if ns.config:
        try:
            with open(ns.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {ns.config}: {exc}") from exc
        except OSError as exc:
            raise ConfigError(f"cannot read config {ns.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        for key in doc:
            if key not in CONFIG_KEYS:
                hint = difflib.get_close_matches(key, sorted(CONFIG_KEYS), n=1)
                extra = f"; did you mean {hint[0]!r}?" if hint else ""
                raise ConfigError(f"unknown config key {key!r}{extra}")
        if "task" in doc and doc["task"] != ns.task:
            raise ConfigError(f"config task {doc['task']!r} conflicts with command {ns.task!r}")
    merged = {k: _coerce(k, v) for k, v in doc.items() if k != "task"}
    for key in CONFIG_KEYS - {"task"}:
        val = getattr(ns, key, None)
        if val is not None:
            merged[key] = _coerce(key, val)
    if "K" in merged and merged["K"] is None:
        merged.pop("K")
    cfg = RunConfig(task=ns.task, **{k: v for k, v in merged.items() if v is not None or k == "K"})
    for group in REQUIRED[cfg.task]:
        if all(getattr(cfg, k) is None for k in group):
            raise ConfigError(f"missing required key {' or '.join(repr(k) for k in group)} for task {cfg.task!r}")
    if cfg.N is None and cfg.task in DEFAULT_N:
        cfg.N = DEFAULT_N[cfg.task]
    if cfg.n_list is None and cfg.task == "ladder":
        cfg.n_list = list(harness.DEFAULT_LADDER)
    if cfg.format not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {cfg.format!r}")
    return cfg


def parse_functional(text: str, d: int):
    kind, _, rest = text.strip().partition(" ")
    nums = _floats(rest) if rest.strip() else []
    try:
        if kind == "linear" and len(nums) in (d, d + 1):
            return ratefn.terminal_linear(nums[:d], nums[d] if len(nums) > d else 0.0)
        if kind == "quadratic" and len(nums) == d + 1:
            return ratefn.terminal_quadratic(nums[:d], nums[d])
        if kind == "threshold" and len(nums) == d + 2:
            return ratefn.terminal_threshold(nums[:d], nums[d], nums[d + 1])
        if kind == "constant" and len(nums) == 1:
            return ratefn.constant(nums[0])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"cannot parse functional {text!r} for dimension {d}")


def _control(cfg: RunConfig, d: int) -> ControlPath | None:
    if cfg.u is None:
        return None
    if len(cfg.u) != d:
        raise ConfigError(f"u needs {d} entries")
    return ControlPath(np.tile(cfg.u, (2, 1)))


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return float(v) if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    return v


def _emit(cfg: RunConfig, result: dict, table: list) -> None:
    if cfg.json:
        print(json.dumps(_jsonable(result), sort_keys=True))
    else:
        width = max(len(k) for k, _ in table) if table else 0
        for k, v in table:
            print(f"{k.ljust(width)}  {v}")


def _write_out(cfg: RunConfig, text: str) -> None:
    if cfg.out:
        Path(cfg.out).write_text(text, encoding="utf-8")


def dispatch(cfg: RunConfig) -> int:
    try:
        spec = get_model(cfg.model, cfg.gamma)
    except (ModelError, OSError, ValueError, KeyError) as exc:
        print(f"error: cannot load model {cfg.model!r}: {exc}", file=sys.stderr)
        return 2
    d = spec.dimension
    try:
        event = importance.parse_event(cfg.event, d) if cfg.event else None
        F = parse_functional(cfg.functional, d) if cfg.functional else None
        u = _control(cfg, d)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return _TASKS[cfg.task](cfg, spec, event, F, u)
    except (ConvergenceError, DegenerateEstimateError, DomainError, ModelError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _validate(cfg, spec, event, F, u):
    rep = validate_model(spec, seed=cfg.seed)
    doc = rep.to_dict()
    _write_out(cfg, json.dumps(_jsonable(doc), sort_keys=True, indent=1) + "\n")
    _emit(cfg, doc, [(c.name, f"{c.verdict}  measured={c.measured:.6g}" if c.measured is not None else c.verdict)
                     for c in rep.clauses])
    return 0 if rep.passed else 1


def _simulate(cfg, spec, event, F, u):
    paths = simulate_y(spec, cfg.n, cfg.N, cfg.seed, threads=cfg.threads)
    y1 = paths.terminal
    doc = {"n": cfg.n, "N": cfg.N, "seed": cfg.seed, "a_n": spec.a(cfg.n),
           "mean_y1": y1.mean(axis=0), "var_y1": y1.var(axis=0, ddof=1) if cfg.N > 1 else None,
           "sup_norm_median": float(np.median([p.sup_norm() for p in paths]))}
    if cfg.dump:
        if u is None:
            sched = ControlSchedule.zero(spec, cfg.n)
        else:
            sched = tilt_schedule_from_control(spec, u, cfg.K or default_K(u), cfg.n)
        traj = simulate_controlled(spec, sched, cfg.n, cfg.seed)
        Path(cfg.dump).write_text(traj.to_csv(), encoding="utf-8")
        doc["dump"] = cfg.dump
    _write_out(cfg, json.dumps(_jsonable(doc), sort_keys=True) + "\n")
    _emit(cfg, doc, [(k, v) for k, v in sorted(_jsonable(doc).items())])
    return 0


def _rate(cfg, spec, event, F, u):
    if cfg.target is not None:
        if len(cfg.target) != spec.dimension:
            raise ConfigError(f"target needs {spec.dimension} entries")
        sol = ratefn.terminal_rate(spec, cfg.target, cfg.m)
    else:
        sol = event.rate(spec, cfg.m)
    _write_out(cfg, sol.to_json() + "\n")
    doc = {"value": sol.value, "infinite": not sol.finite, "grid": cfg.m}
    _emit(cfg, doc, [("value", f"{sol.value:.10g}" if sol.finite else "inf")])
    return 0


def _laplace(cfg, spec, event, F, u):
    sol = ratefn.laplace_value(spec, F, cfg.m)
    _write_out(cfg, sol.to_json() + "\n")
    doc = {"value": sol.value, "iterations": sol.diagnostics.get("iterations")}
    _emit(cfg, doc, [("value", f"{sol.value:.10g}"), ("iterations", sol.diagnostics.get("iterations"))])
    return 0


def _estimate(cfg, spec, event, F, u):
    kw = dict(threads=cfg.threads, backend=cfg.backend)
    if event is not None:
        est = importance.is_probability(spec, event, u, cfg.K, cfg.n, cfg.N, cfg.seed, **kw)
    else:
        est = importance.is_laplace(spec, F, u, cfg.K, cfg.n, cfg.N, cfg.seed, **kw)
    _write_out(cfg, est.to_json() + "\n")
    doc = est.to_dict()
    _emit(cfg, doc, [(k, doc[k]) for k in ("estimate", "stderr", "ci_halfwidth", "rel_error", "ess", "N", "n")])
    return 1 if est.degenerate else 0


def _ladder(cfg, spec, event, F, u):
    target = event if event is not None else F
    out = cfg.out or f"ladder.{cfg.format}"
    try:
        rep = harness.run_ladder(spec, target, cfg.n_list, cfg.N, cfg.K, cfg.seed, u=u,
                                 threads=cfg.threads, m=cfg.m, backend=cfg.backend)
    except Exception as exc:
        partial = getattr(exc, "partial_report", None)
        if partial is not None and partial.rows:
            harness.emit_report(partial, out, cfg.format, cfg.timings)
        raise
    harness.emit_report(rep, out, cfg.format, cfg.timings)
    if cfg.json:
        print(json.dumps({"report": out, "rows": [_jsonable(asdict(r)) for r in rep.rows],
                          "metadata": _jsonable(rep.metadata)}, sort_keys=True))
    else:
        sys.stdout.write(harness.render_report(rep, "csv", cfg.timings))
    return 0


_TASKS = {"validate": _validate, "simulate": _simulate, "rate": _rate, "laplace": _laplace,
          "estimate": _estimate, "ladder": _ladder}


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return dispatch(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
