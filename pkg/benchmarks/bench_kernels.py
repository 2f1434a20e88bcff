"""Time one BP sweep with the compiled and pure-Python kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--n 10000] [--c 6] [--q 4 7] [--repeat 5]

The pure-Python async kernel is much slower, so it is timed on fewer
sweeps and on a smaller graph when ``--py-n`` is given.
"""

import argparse
import time

import numpy as np

from sbmcv import bp, kernels, synth
from sbmcv.model import planted_partition


def _time_sweeps(g, hp, backend, schedule, sweeps, seed=0):
    st = bp.init_messages(g, hp.q, seed=seed)
    st.field = bp.compute_field(st.marginals, hp)
    impl = kernels.get_backend(backend)
    t0 = time.perf_counter()
    for k in range(sweeps):
        bp.sweep(st, hp, g, rng=seed + k, schedule=schedule, backend=impl)
    return (time.perf_counter() - t0) / sweeps


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10000)
    ap.add_argument("--py-n", type=int, default=None, help="graph size for the python backend")
    ap.add_argument("--c", type=float, default=6.0)
    ap.add_argument("--q", type=int, nargs="+", default=[2, 4, 7])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--py-repeat", type=int, default=1)
    args = ap.parse_args(argv)

    have_compiled = True
    try:
        kernels.get_backend("compiled")
    except ImportError:
        have_compiled = False
    print(f"default backend: {kernels.BACKEND}")
    print(f"{'q':>3} {'N':>7} {'schedule':>9} {'backend':>9} {'ms/sweep':>10} {'us/half-edge':>13}")
    for q in args.q:
        g = synth.sample_sbm(planted_partition(q, args.c, 0.1, args.n), seed=q).graph
        hp = planted_partition(q, args.c, 0.1, g.n)
        runs = [("async", "compiled", g, hp, args.repeat)] if have_compiled else []
        gp, hpp = g, hp
        if args.py_n:
            gp = synth.sample_sbm(planted_partition(q, args.c, 0.1, args.py_n), seed=q).graph
            hpp = planted_partition(q, args.c, 0.1, gp.n)
        runs.append(("async", "python", gp, hpp, args.py_repeat))
        runs.append(("sync", "python", g, hp, args.repeat))
        for schedule, backend, gg, hh, reps in runs:
            dt = _time_sweeps(gg, hh, backend, schedule, reps)
            print(f"{q:>3} {gg.n:>7} {schedule:>9} {backend:>9} {1e3 * dt:>10.2f} "
                  f"{1e6 * dt / (2 * gg.m):>13.3f}")


if __name__ == "__main__":
    main()
