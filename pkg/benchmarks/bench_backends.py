"""Time the numba kernels against the numpy fallback on a few representative workloads.

Each backend runs in a fresh interpreter (the backend is fixed at import).
A warm-up call keeps numba compilation out of the timings.

    python3 benchmarks/bench_backends.py [--repeat 3] [--only name,...]
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from bbmre import _backend, pde, tilt
from bbmre.branching import OffspringDistribution, sample_maxima
from bbmre.env import EnvSpec, sample_environment

env = sample_environment(EnvSpec("interpolated-iid", 0.5, 1.5, x_lo=-300, x_hi=300), 1)
lat = sample_environment(EnvSpec("lattice-iid", 0.2, 2.0, x_lo=-400, x_hi=400, block=10), 1)
d = OffspringDistribution.binary()
tm = tilt.solve_b(env, -1.0, (-20.0, 60.0))

def fkpp(small):
    T = 2.0 if small else 20.0
    pde.solve_fkpp_rows(env, d, np.arange(-2.0, 30.0, 2.0), T)

def lattice(small):
    T = 2.0 if small else 60.0
    pde.quantile_table(lat, d, np.arange(-5, 120), np.array([T]))

def trees(small):
    sample_maxima(env, d, 0.0, 1.0 if small else 5.0, 50 if small else 2000, seed=1)

def tilted(small):
    tilt.simulate_tilted(tm, 0.0, 2.0 if small else 40.0, 20 if small else 2000, seed=1)

def riccati(small):
    tilt.solve_b(env, -1.0, (-20.0, 40.0 if small else 250.0), h=0.005)

tasks = dict(fkpp=fkpp, lattice=lattice, trees=trees, tilted=tilted, riccati=riccati)
names, repeat = sys.argv[1].split(","), int(sys.argv[2])
out = {}
for n in names:
    tasks[n](True)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        tasks[n](False)
        best = min(best, time.perf_counter() - t0)
    out[n] = best
print(json.dumps(dict(backend=_backend.BACKEND, times=out)))
"""

TASKS = ["fkpp", "lattice", "trees", "tilted", "riccati"]


def run_backend(backend, names, repeat):
    env = dict(os.environ, BBMRE_BACKEND=backend)
    r = subprocess.run([sys.executable, "-c", WORKER, ",".join(names), str(repeat)],
                       capture_output=True, text=True, env=env)
    if r.returncode:
        sys.exit(f"{backend} worker failed:\n{r.stderr}")
    return json.loads(r.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--only", help="comma list from " + ",".join(TASKS))
    a = ap.parse_args(argv)
    names = a.only.split(",") if a.only else TASKS
    res = {b: run_backend(b, names, a.repeat)["times"] for b in ("numba", "numpy")}
    print(f"{'workload':10s} {'numba s':>9s} {'numpy s':>9s} {'speedup':>8s}")
    for n in names:
        tn, tp = res["numba"][n], res["numpy"][n]
        print(f"{n:10s} {tn:9.3f} {tp:9.3f} {tp / tn:7.1f}x")


if __name__ == "__main__":
    main()
