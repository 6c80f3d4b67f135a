"""Benchmark the compiled path kernel against the numpy fallback.

Runs the same pre-seeded workloads through every available engine, checks the
outputs agree bitwise, and reports throughput.  Run as
`python -m regimepush.kernel_bench`.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from .backend import available_engines
from .benchmarks import SquaredNoisePayout
from .grid import Grid
from .model import builtin_model
from .simulate import RegionPolicy, SimOptions, _run_batches
from .solver import solve


def _workloads(paths, dt):
    m3 = builtin_model("example3")
    _, p3, _ = solve(m3, Grid([10.0], [401]))
    m4 = builtin_model("example4")
    yield ("regime-switch region policy", m3, RegionPolicy(p3), [2.0], 1,
           SimOptions(dt=dt, horizon=20.0, paths=paths, seed=7))
    yield ("degenerate-noise explicit payout", m4, SquaredNoisePayout(), [1.0], 0,
           SimOptions(dt=dt, horizon=10.0, paths=paths, seed=7, mode="explicit"))


def run(paths=512, dt=1e-3):
    engines = available_engines()
    print(f"engines available: {[n for n, _ in engines]}")
    ok = True
    for label, model, source, x0, alpha0, opts in _workloads(paths, dt):
        print(f"\n{label}: {opts.paths} paths x {int(opts.horizon / opts.dt)} steps")
        results = {}
        for name, eng in engines:
            t0 = time.perf_counter()
            out = _run_batches(model, source, np.asarray(x0), alpha0, opts,
                               opts.paths, opts.seed, engine=eng)
            elapsed = time.perf_counter() - t0
            results[name] = out[0]
            steps = opts.paths * int(opts.horizon / opts.dt)
            print(f"  {name:9s}: {elapsed:7.3f} s  ({steps / elapsed / 1e6:6.1f} M steps/s)"
                  f"  mean payoff {out[0].mean():.6f}")
        if len(results) == 2:
            agree = np.array_equal(results["pure"], results["compiled"])
            print(f"  bitwise agreement: {agree}")
            ok = ok and agree
    return ok


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=512)
    ap.add_argument("--dt", type=float, default=1e-3)
    args = ap.parse_args()
    return 0 if run(args.paths, args.dt) else 1


if __name__ == "__main__":
    raise SystemExit(main())
