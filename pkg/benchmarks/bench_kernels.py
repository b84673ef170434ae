"""Compare the compiled and numpy path kernels on a few representative workloads.

Usage::

    python benchmarks/bench_kernels.py [--paths N] [--repeat K]

Both backends consume the same per-path random streams, so besides timings
the script reports whether their hitting records agree.
"""
from __future__ import annotations

import argparse
import time
from dataclasses import replace

import numpy as np

from critlab import backend
from critlab import montecarlo as mc
from critlab.operators import OperatorSpec


def workloads(paths: int):
    bm3 = OperatorSpec.build(3)
    yield ("bm-3d hit/exit", bm3, [2.0, 0.0, 0.0], 1.0,
           mc.SimConfig(dt=1e-2, t_max=50.0, r_max=10.0, paths=paths, seed=1), None)
    killed = OperatorSpec.build(1, V=-1.0)
    yield ("killed bm-1d", killed, [1.5], 0.5,
           mc.SimConfig(dt=1e-3, t_max=20.0, paths=paths, seed=2, weight_floor=1e-20), None)
    ou = OperatorSpec.build(2, b=["-x1", "-x2"], V="0.1*exp(-r^2)")
    yield ("ou-2d with potential", ou, [2.0, 0.0], 0.5,
           mc.SimConfig(dt=1e-2, t_max=20.0, paths=paths, seed=3), None)
    hardy = OperatorSpec.build(3, V="0.25/r^2")
    drift = mc.TwistedDrift.from_expressions(("-x1/r^2", "-x2/r^2", "-x3/r^2"), 3)
    yield ("twisted hardy-3d", hardy, [1.1, 0.0, 0.0], 1.0,
           mc.SimConfig(dt=1e-2, t_max=20.0, paths=paths, seed=4), drift)


def time_one(spec, x0, r, cfg, drift, name, repeat):
    cfg = replace(cfg, backend=name)
    best, rec = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        rec = mc.simulate_hitting(spec, x0, r, cfg, twisted=drift)
        best = min(best, time.perf_counter() - t0)
    return best, rec


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--paths", type=int, default=2000)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    names = backend.available()
    print(f"backends: {', '.join(names)}; paths={args.paths}, best of {args.repeat}")
    print(f"{'workload':24s}" + "".join(f"{n:>12s}" for n in names) + f"{'speedup':>10s}  agree")
    for label, spec, x0, r, cfg, drift in workloads(args.paths):
        times, recs = {}, {}
        for n in names:
            times[n], recs[n] = time_one(spec, x0, r, cfg, drift, n, args.repeat)
        line = f"{label:24s}" + "".join(f"{times[n]:11.3f}s" for n in names)
        if "compiled" in times:
            a, b = recs["python"], recs["compiled"]
            same = np.array_equal(a.cause, b.cause) and np.allclose(a.tau, b.tau, rtol=1e-9)
            line += f"{times['python'] / times['compiled']:9.1f}x  {'yes' if same else 'no'}"
        print(line)


if __name__ == "__main__":
    main()
