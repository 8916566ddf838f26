"""Throughput of the compiled replication core against its numpy fallback.

Usage::

    python benchmarks/bench_core.py [--n 1024] [--N 20000] [--repeat 3] [--threads 1]

Prints nanoseconds per replication-step for each catalog model and backend,
and checks that both backends return the same summaries.
"""

import argparse
import time

import numpy as np

from modev.engine import BACKEND, run_batch
from modev.model import CATALOG, get_model


def _alphas(spec, n):
    t = np.arange(n) / n
    return 0.05 * np.stack([np.cos(2 * np.pi * (k + 1) * t) for k in range(spec.dimension)], axis=1)


def time_backend(spec, n, N, backend, repeat, threads):
    al = _alphas(spec, n)
    best = np.inf
    res = None
    for r in range(repeat):
        t0 = time.perf_counter()
        res = run_batch(spec, al, n, N, seed=r, threads=threads, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, res


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--N", type=int, default=20_000)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--models", default=",".join(sorted(CATALOG)))
    args = p.parse_args(argv)

    backends = ["python", "generic"] + (["compiled"] if BACKEND == "compiled" else [])
    steps = args.n * args.N
    print(f"n={args.n} N={args.N} threads={args.threads} (best of {args.repeat}); ns per replication-step")
    print(f"{'model':8s}" + "".join(f"{b:>12s}" for b in backends) + f"{'speedup':>10s}{'agree':>7s}")
    for name in args.models.split(","):
        spec = get_model(name)
        times = {}
        results = {}
        for b in backends:
            times[b], results[b] = time_backend(spec, args.n, args.N, b, args.repeat, args.threads)
        ref = results["python"]
        agree = all(np.allclose(results[b].loglr, ref.loglr, rtol=1e-11, atol=1e-12)
                    and np.allclose(results[b].y_final, ref.y_final, rtol=1e-11, atol=1e-12) for b in backends)
        fast = times.get("compiled", times["python"])
        row = "".join(f"{1e9 * times[b] / steps:12.1f}" for b in backends)
        print(f"{name:8s}{row}{times['python'] / fast:9.1f}x{'yes' if agree else 'NO':>7s}")


if __name__ == "__main__":
    main()
