"""Compare the compiled and pure-Python simulation kernels.

Run ``python benchmarks/bench_kernels.py``; prints wall time per kernel and
the speed-up on an open-loop run of the example band-passed element and a
closed-loop 5 Hz tracking run of the example controller.
"""

import argparse
import math
import time

import numpy as np

from resetband import _kernels_py
from resetband import designkit as dk
from resetband.shaping import ShapingSpec, build_bandpassed_cglp, build_shaping_filter
from resetband.timesim import SimConfig, Sinusoid, simulate_closed_loop, simulate_open_loop

try:
    from resetband import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--periods", type=int, default=40, help="closed-loop periods at 5 Hz")
    args = ap.parse_args(argv)

    filt = build_shaping_filter(ShapingSpec(1.0, 10.0, math.radians(-57.34), method="full"),
                                N_crone=6)
    el = build_bandpassed_cglp(filt, 0.5, 0.2)
    ol_cfg = SimConfig(samples_per_period=20000, periods_total=20, periods_discard=10,
                       hold="foh")
    design = dk.build_controller(dk.example_specs()["bandpassed_cglp"])
    cl_cfg = SimConfig(periods_total=args.periods, periods_discard=args.periods // 2)
    ref = Sinusoid(2e-4, 2 * math.pi * 5)

    jobs = {
        "open_loop": lambda k: simulate_open_loop(el, Sinusoid(1.0, 3.0), ol_cfg, kernels=k),
        "closed_loop": lambda k: simulate_closed_loop(design.chain, design.plant, ref, cl_cfg,
                                                      kernels=k),
    }
    print(f"{'kernel':<12} {'samples':>9} {'python [s]':>11} {'cython [s]':>11} {'speed-up':>9}")
    for name, job in jobs.items():
        tp, a = _best(lambda: job(_kernels_py), args.repeat)
        if _kernels_c is None:
            print(f"{name:<12} {len(a.t):>9d} {tp:>11.4f} {'n/a':>11} {'n/a':>9}")
            continue
        tc, b = _best(lambda: job(_kernels_c), args.repeat)
        diff = np.max(np.abs(a.y - b.y)) / max(np.max(np.abs(a.y)), 1e-300)
        print(f"{name:<12} {len(a.t):>9d} {tp:>11.4f} {tc:>11.4f} {tp / tc:>8.1f}x"
              f"   (max rel diff {diff:.1e})")


if __name__ == "__main__":
    main()
