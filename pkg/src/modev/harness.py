"""n-ladder experiments comparing ``-a(n)^2 log p_hat`` with rate predictions, and report output."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ratefn
from .importance import Event, is_laplace, is_probability, resolve_control
from .model import ModelSpec, covariance
from .ratefn import ControlPath, Functional
from .schedule import default_K

COLUMNS = ["n", "a_n", "estimate", "stderr", "neg_a2_log", "prediction", "gap", "seconds", "censored"]
DEFAULT_LADDER = (256, 1024, 4096, 16384)


@dataclass
class LadderRow:
    n: int
    a_n: float
    estimate: float
    stderr: float
    neg_a2_log: float | None
    prediction: float
    gap: float | None
    seconds: float = 0.0
    censored: bool = False
    gap_se: float = float("nan")


@dataclass
class LadderReport:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def gaps(self) -> np.ndarray:
        return np.array([np.nan if r.gap is None else r.gap for r in self.rows], dtype=float)


@dataclass
class ConvergenceVerdict:
    passed: bool
    final_gap: float
    inversions: int
    slope: float | None       # least-squares slope of log gap against log n
    reasons: list = field(default_factory=list)


def derive_seed(seed: int, n: int) -> int:
    """Independent 64-bit seed per rung."""
    s = np.random.SeedSequence([int(seed), int(n)]).generate_state(2, dtype=np.uint32)
    return int(s[0]) | (int(s[1]) << 32)


def run_ladder(spec: ModelSpec, target, n_list, N: int, K: float | None, seed: int, *,
               u: ControlPath | None = None, threads: int = 1, m: int = ratefn.DEFAULT_M,
               backend: str = "auto") -> LadderReport:
    """One row per ``n``: IS estimate, ``-a(n)^2 log`` of it, and its gap to the rate prediction.

    ``target`` is an :class:`Event` (probability ladder) or a ``Functional``
    (Laplace ladder; there the estimate column already holds the Laplace value).
    If a rung fails, the exception is re-raised with the rows so far attached as
    ``partial_report``.
    """
    n_list = [int(v) for v in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be strictly increasing")
    is_event = isinstance(target, Event)
    if is_event:
        sol = target.rate(spec, m)
    else:
        sol = ratefn.laplace_value(spec, target, m)
    prediction = sol.value
    if u is None:
        u = sol.control if sol.control is not None else ControlPath.zeros(m, spec.dimension)
    K_used = default_K(u) if K is None else float(K)
    cov = covariance(spec.kernel, spec.x0)
    from .schedule import ControlSchedule

    report = LadderReport(metadata={
        "model": spec.name,
        "target": str(target) if is_event else getattr(target, "name", "functional"),
        "kind": "probability" if is_event else "laplace",
        "gamma": spec.gamma,
        "N": int(N),
        "K": K_used,
        "seed": int(seed),
        "rung_seeds": [derive_seed(seed, n) for n in n_list],
        "prediction": prediction if math.isfinite(prediction) else None,
        "degenerate_kernel": bool(np.allclose(cov, 0.0)) and not spec.kernel.state_dependent,
        "u_fingerprint": ControlSchedule(1, K_used, np.zeros((1, spec.dimension)), u).fingerprint(),
    })
    for n in n_list:
        t0 = time.perf_counter()
        try:
            rseed = derive_seed(seed, n)
            a2 = spec.a(n) ** 2
            if is_event:
                est = is_probability(spec, target, u, K_used, n, N, rseed, threads=threads, backend=backend)
                censored = est.estimate <= 0
                neg = None if censored else -a2 * math.log(est.estimate)
                gap_se = float("nan") if censored else a2 * est.stderr / est.estimate
            else:
                est = is_laplace(spec, target, u, K_used, n, N, rseed, threads=threads, backend=backend)
                censored = False
                neg = est.estimate
                gap_se = est.stderr
        except Exception as exc:  # keep the finished rungs for the caller
            exc.partial_report = report
            raise
        gap = None if neg is None or not math.isfinite(prediction) else abs(neg - prediction)
        report.rows.append(LadderRow(n, spec.a(n), est.estimate, est.stderr, neg, prediction, gap,
                                     time.perf_counter() - t0, censored, gap_se))
    return report


def check_convergence(report: LadderReport, tol_final: float) -> ConvergenceVerdict:
    """Pass iff the final gap is at most ``tol_final`` and the gaps never rise, except
    for at most one rise no larger than the standard error of the rows involved."""
    rows = report.rows
    if len(rows) < 3:
        raise ValueError("need at least 3 ladder rows")
    gaps = report.gaps
    reasons = []
    final = float(gaps[-1])
    if not (final <= tol_final):
        reasons.append(f"final gap {final:.4g} exceeds {tol_final:.4g}")
    inversions = 0
    for k in range(len(rows) - 1):
        if not gaps[k + 1] > gaps[k]:
            continue
        inversions += 1
        se = np.nanmax([rows[k].gap_se, rows[k + 1].gap_se, 0.0])
        if gaps[k + 1] - gaps[k] > se:
            reasons.append(f"gap rises from {gaps[k]:.4g} to {gaps[k + 1]:.4g} beyond one std-err ({se:.3g})")
    if inversions > 1:
        reasons.append(f"{inversions} gap inversions")
    ok = np.isfinite(gaps) & (gaps > 0)
    slope = None
    if ok.sum() >= 2:
        ns = np.array([r.n for r in rows], dtype=float)[ok]
        slope = float(np.polyfit(np.log(ns), np.log(gaps[ok]), 1)[0])
    return ConvergenceVerdict(not reasons, final, inversions, slope, reasons)


def discrete_gronwall_envelope(b_seq, c_seq) -> np.ndarray:
    """``e_n = c_n + sum_{k<n} b_k c_k exp(sum_{i=k+1}^{n-1} b_i)`` for every index ``n``.

    Any sequence with ``a_n <= c_n + sum_{k<n} b_k a_k`` satisfies ``a_n <= e_n``.
    """
    b = np.asarray(b_seq, dtype=float)
    c = np.asarray(c_seq, dtype=float)
    if b.shape != c.shape or b.ndim != 1:
        raise ValueError("b and c must be 1-d sequences of equal length")
    if np.any(b < 0) or np.any(c < 0):
        raise ValueError("b and c must be nonnegative")
    e = np.empty_like(c)
    s = 0.0
    for k in range(c.size):
        e[k] = c[k] + s
        s = s * math.exp(b[k]) + b[k] * c[k]
    return e


# --- output -------------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.10g" % v


def _json_value(v):
    if isinstance(v, bool) or v is None or isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float("%.10g" % v) if math.isfinite(v) else None
    if isinstance(v, dict):
        return {k: _json_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_value(x) for x in v]
    return v


def _row_dict(row: LadderRow, timings: bool) -> dict:
    d = asdict(row)
    d.pop("gap_se")
    if not timings:
        d["seconds"] = None
    return d


def render_report(report: LadderReport, fmt: str = "csv", timings: bool = False) -> str:
    """The exact text written by :func:`emit_report`."""
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in report.rows:
            d = _row_dict(row, timings)
            w.writerow([_fmt(d[c]) for c in COLUMNS])
        return buf.getvalue()
    if fmt == "json":
        doc = {"metadata": _json_value(report.metadata),
               "rows": [_json_value(_row_dict(r, timings)) for r in report.rows]}
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def emit_report(report: LadderReport, path, fmt: str = "csv", timings: bool = False) -> Path:
    """Write the report; byte-stable for fixed inputs unless ``timings`` is set."""
    text = render_report(report, fmt, timings)
    path = Path(path)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def load_report(path) -> LadderReport:
    """Read a report written by :func:`emit_report` (either format)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        rows = [LadderRow(**{**r, "seconds": r["seconds"] or 0.0}) for r in doc["rows"]]
        return LadderReport(rows, doc["metadata"])
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        f = lambda k: None if rec[k] == "" else float(rec[k])  # noqa: E731
        rows.append(LadderRow(int(rec["n"]), f("a_n"), f("estimate"), f("stderr"), f("neg_a2_log"),
                              f("prediction"), f("gap"), f("seconds") or 0.0, rec["censored"] == "1"))
    return LadderReport(rows, {})
