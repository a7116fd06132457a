"""Compiled loop kernels vs their numpy fallbacks.

Usage::

    python benchmarks/bench_kernels.py [--batch 4096] [--entries 200000] [--repeat 5]

Reports the best-of-``repeat`` wall time per kernel and the ratio. The
compiled kernels are warmed up once before timing so JIT compilation is
not counted.
"""
import argparse
import time

import numpy as np

from mrfzoom import kernels
from mrfzoom.bloch import Simulator
from mrfzoom.fingerprint import normalize
from mrfzoom.sequence import build_schedule


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--batch", type=int, default=4096, help="fingerprints per simulate call")
    ap.add_argument("--entries", type=int, default=200_000, help="rows in the scanned table")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    sched = build_schedule(500, 7)
    sim = Simulator(sched)
    rng = np.random.default_rng(args.seed)
    n = args.batch
    t1 = rng.uniform(0.3, 3.0, n)
    t2 = rng.uniform(0.03, 0.3, n)
    df = rng.uniform(-300, 300, n)
    common = (t1, t2, df, sim.rf, sim.te, sim.tl, sim.m0)
    q = normalize(sim.batch(1.4, 0.5, 100.0)[0])

    # a table of unit-norm rows in the on-disk float32 re/im layout
    base = normalize(sim.batch(t1[:512], t2[:512], df[:512])).astype(np.complex64)
    rows = np.resize(base.view(np.float32), (args.entries, 2 * len(sched)))

    cases = [
        ("simulate", f"{n} x {len(sched)}",
         lambda: kernels.simulate_nb(*common), lambda: kernels.simulate_np(*common)),
        ("inner", f"{n} x {len(sched)}",
         lambda: kernels.inner_nb(*common, q), lambda: kernels.inner_np(*common, q)),
        ("scan cc", f"{args.entries} rows",
         lambda: kernels.scan_nb(rows, q, kernels.METRIC_CC),
         lambda: kernels.scan_np(rows, q, kernels.METRIC_CC)),
        ("scan euclidean", f"{args.entries} rows",
         lambda: kernels.scan_nb(rows, q, kernels.METRIC_EUCLIDEAN),
         lambda: kernels.scan_np(rows, q, kernels.METRIC_EUCLIDEAN)),
    ]
    print(f"{'kernel':<16}{'size':>18}{'numba ms':>12}{'numpy ms':>12}{'ratio':>8}")
    for name, size, fnb, fnp in cases:
        a = best_of(fnb, args.repeat)
        b = best_of(fnp, args.repeat)
        print(f"{name:<16}{size:>18}{a * 1e3:>12.2f}{b * 1e3:>12.2f}{b / a:>8.1f}")


if __name__ == "__main__":
    main()
