"""Compiled vs pure-Python event loop on identical workloads.

    python3 benchmarks/bench_kernels.py [--arrivals N] [--repeat R]

Both backends consume the same random streams, so each case also checks that
their raw outputs agree bit for bit.
"""

import argparse
import time

import numpy as np

from slqsim.engine import BACKENDS, run_simulation
from slqsim.model import SystemConfig

CASES = {
    "SLQ(2) load 0.9": SystemConfig.baseline(),
    "SLQ(5) load 0.9": SystemConfig.baseline(d=5),
    "SLQ(2) load 0.5": SystemConfig.baseline(load=0.5),
    "JSQ(2) load 0.9": SystemConfig.baseline(policy="JSQ"),
}


def best_of(cfg, backend, arrivals, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = run_simulation(cfg, 1, arrivals, backend=backend)
        times.append(time.perf_counter() - t0)
    return min(times), out


def same(a, b):
    return all(np.array_equal(np.asarray(a.raw[k]), np.asarray(b.raw[k])) for k in a.raw)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--arrivals", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if "compiled" not in BACKENDS:
        raise SystemExit("compiled kernel not built; run `pip install -e .` with Cython available")

    print(f"{args.arrivals} arrivals per run, best of {args.repeat}")
    print(f"{'case':<18}{'python s':>10}{'compiled s':>12}{'speedup':>9}{'Marr/s':>8}  identical")
    for name, cfg in CASES.items():
        tp, op = best_of(cfg, "python", args.arrivals, args.repeat)
        tc, oc = best_of(cfg, "compiled", args.arrivals, args.repeat)
        rate = args.arrivals / tc / 1e6
        print(f"{name:<18}{tp:>10.3f}{tc:>12.4f}{tp / tc:>8.1f}x{rate:>8.2f}  {same(op, oc)}")


if __name__ == "__main__":
    main()
