"""Compiled kernels against the pure numpy fallback.

    python benchmarks/bench_kernels.py [--steps N] [--agents M] [--repeat R]

Each path runs in its own interpreter, with and without
``DDAGOSSIP_PURE_NUMPY=1``, since the flag is read once at import.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def measure(steps, agents, projections, repeat):
    from ddagossip._jit import PURE_NUMPY
    from ddagossip.algorithms import StepSizeSchedule, dda_run
    from ddagossip.network import pairwise_gossip
    from ddagossip.polyhedron import triangle_polyhedron
    from ddagossip.problem import estimation_problem

    prob = estimation_problem(m=agents, rng=0, tilt_scale=0.5)
    poly = triangle_polyhedron()
    scheme = pairwise_gossip(agents)
    sched = StepSizeSchedule(5.0, 0.67)
    box = [[0.0, 5.0], [0.0, 5.0]]
    z = np.random.default_rng(0).uniform(-10, 10, size=(projections, 2))

    dda_run(prob, poly, scheme, sched, 10, box, 0)  # compile or warm caches
    poly.project(z[0])

    def best_of(fn):
        best = np.inf
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        return best

    return {
        "pure_numpy": PURE_NUMPY,
        "dda_run": best_of(lambda: dda_run(prob, poly, scheme, sched, steps, box, 1)),
        "project": best_of(lambda: [poly.project(zi) for zi in z]),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--agents", type=int, default=5)
    ap.add_argument("--projections", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(measure(args.steps, args.agents, args.projections, args.repeat)))
        return

    res = {}
    for label, flag in (("compiled", "0"), ("numpy", "1")):
        env = {**os.environ, "DDAGOSSIP_PURE_NUMPY": flag}
        cmd = [sys.executable, __file__, "--child", "--steps", str(args.steps), "--agents", str(args.agents),
               "--projections", str(args.projections), "--repeat", str(args.repeat)]
        out = subprocess.run(cmd, env=env, check=True, capture_output=True, text=True).stdout
        res[label] = json.loads(out.strip().splitlines()[-1])

    c, p = res["compiled"], res["numpy"]
    print(f"{'workload':<30}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for key, name in (("dda_run", f"dda_run m={args.agents} k={args.steps}"),
                      ("project", f"project x{args.projections}")):
        print(f"{name:<30}{c[key]:>12.4f}{p[key]:>12.4f}{p[key] / c[key]:>10.1f}")


if __name__ == "__main__":
    main()
