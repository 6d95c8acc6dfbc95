"""Compare the numba kernels with the pure-Python/NumPy fallback.

Each backend runs in its own interpreter because ``AGESIR_DISABLE_NUMBA`` is
read at import time. Timings are the best of ``--repeat`` calls after one
warm-up call (which also triggers JIT compilation). Output digests are
compared so a speedup never hides a behavioural difference.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 3] [--scale 1.0]
"""
import argparse
import hashlib
import json
import os
import subprocess
import sys
import time


def workloads(scale):
    import numpy as np

    from agesir.abm import SimulationConfig, run
    from agesir.clt import CltSetup, sample_driver_paths, solve_clt_path
    from agesir.lln import Grid, solve_lln
    from agesir.model import AgeLaw, DurationDistribution, InfectivityLaw, InitialCondition

    init = InitialCondition(0.9, 0.1, 0.0, AgeLaw.uniform(1.0))
    N = int(2000 * scale)
    two_phase = InfectivityLaw.two_phase(DurationDistribution.gamma(3.0, 0.6))
    hump = InfectivityLaw.separable(lambda a: 0.8 * a * np.exp(1 - a), DurationDistribution.gamma(2.0, 0.5), 60.0)
    markov = InfectivityLaw.indicator(0.4, DurationDistribution.exponential(0.25))
    lln = solve_lln(markov, init, Grid(40.0, 0.01))
    setup = CltSetup(lln, 40.0, 0.2)
    drivers = sample_driver_paths(np.random.default_rng(0), setup, int(200 * scale))

    def sim(law, mode):
        def go():
            tr = run(SimulationConfig(N, init, law, 30.0, 0.5, mode=mode, seed=1))
            return tr.event_time, tr.event_id, tr.F
        return go

    def lln_solve():
        out = solve_lln(markov, init, Grid(40.0, 0.02 / scale))
        return out.S, out.Upsilon

    def clt_solve():
        p = solve_clt_path(drivers)
        return p.S, p.U

    return {
        f"scheduled two-phase, N={N}": sim(two_phase, "scheduled"),
        f"hazard thinning, N={N}": sim(hump, "hazard"),
        "LLN Volterra solve": lln_solve,
        "CLT linear solve": clt_solve,
    }


def worker(repeat, scale):
    from agesir import backend

    out = {"backend": backend(), "rows": {}}
    for name, fn in workloads(scale).items():
        res = fn()  # warm-up / compile
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            res = fn()
            best = min(best, time.perf_counter() - t0)
        h = hashlib.sha256()
        for arr in res:
            h.update(arr.tobytes())
        out["rows"][name] = {"seconds": best, "digest": h.hexdigest()[:16]}
    print(json.dumps(out))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scale", type=float, default=1.0, help="multiplies population size, paths and LLN resolution")
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        worker(args.repeat, args.scale)
        return 0
    results = {}
    for flag in ("0", "1"):
        env = dict(os.environ, AGESIR_DISABLE_NUMBA=flag)
        proc = subprocess.run([sys.executable, __file__, "--worker", "--repeat", str(args.repeat),
                               "--scale", str(args.scale)], env=env, capture_output=True, text=True, check=True)
        data = json.loads(proc.stdout.strip().splitlines()[-1])
        results[data["backend"]] = data["rows"]
    fast, slow = results["numba"], results["python"]
    print(f"{'workload':34s} {'numba [s]':>10s} {'python [s]':>11s} {'speedup':>8s}  same output")
    for name in fast:
        a, b = fast[name], slow[name]
        print(f"{name:34s} {a['seconds']:10.4f} {b['seconds']:11.4f} {b['seconds'] / a['seconds']:8.1f}  "
              f"{a['digest'] == b['digest']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
