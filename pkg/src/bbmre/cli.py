"""Command line entry point: ``bbmre <group> <command> ...``.

Exit codes: 0 success, 2 an assertion suite failed, 1 any other error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, pde, tilt
from ._backend import BACKEND
from .branching import (OffspringDistribution, quantiles_from_samples, sample_lattice_maxima, sample_maxima,
                        write_replicates_csv)
from .env import (KINDS, MARGINALS, EnvSpec, LatticeEnvironment, constant_environment, load_environment,
                  sample_environment, save_environment)


def _env(text: str):
    """``const:VALUE[:LO:HI]`` or a path to a saved environment."""
    if text.startswith("const:"):
        parts = [float(v) for v in text.split(":")[1:]]
        value = parts[0]
        lo, hi = (parts[1], parts[2]) if len(parts) == 3 else (-500.0, 500.0)
        return constant_environment(value, lo, hi)
    return load_environment(text)


def _floats(text: str):
    if ":" in text:
        lo, hi, step = (float(v) for v in text.split(":"))
        return np.arange(lo, hi + 0.5 * step, step)
    return np.array([float(v) for v in text.split(",")])


def _dist(text: str | None):
    if not text:
        return OffspringDistribution.binary()
    probs = {}
    for item in text.split(","):
        k, p = item.split("=")
        probs[int(k)] = float(p)
    return OffspringDistribution.from_dict(probs)


def _write_rows(path, header, rows):
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    finally:
        if path:
            fh.close()


# --------------------------------------------------------------------------
# env

def cmd_env_sample(a):
    spec = EnvSpec(a.kind, a.ei, a.es, a.dx, a.x_lo, a.x_hi, a.marginal, a.p_high, a.mean_low, a.mean_high,
                   a.ramp, a.kappa, a.seed, a.block)
    env = sample_environment(spec)
    save_environment(env, a.out)
    print(f"wrote {a.out}")


def cmd_env_show(a):
    env = load_environment(a.file)
    if isinstance(env, LatticeEnvironment):
        info = dict(kind="lattice-iid", sites=[env.site_lo, env.site_hi], ei=env.ei, es=env.es,
                    kappa=env.kappa, seed=env.seed, mean_rate=float(env.rates.mean()))
    else:
        info = dict(kind=env.spec.kind, domain=list(env.domain), ei=env.ei, es=env.es, dx=env.dx,
                    phase=env.phase, seed=env.seed, knots=int(env.knots.size))
    print(json.dumps(info, indent=1))


# --------------------------------------------------------------------------
# branching

def cmd_branching_maxima(a):
    env = _env(a.env)
    dist = _dist(a.offspring)
    if isinstance(env, LatticeEnvironment):
        mx, pop, _, st = sample_lattice_maxima(env, dist, int(a.x0), a.t, a.n, a.seed, return_all=True)
    else:
        mx, pop, _, st = sample_maxima(env, dist, a.x0, a.t, a.n, a.seed, return_all=True)
    if a.out:
        write_replicates_csv(a.out, a.t, mx, pop, st)
    if a.eps:
        q = quantiles_from_samples(mx, [float(e) for e in a.eps.split(",")], a.t)
        for e, v, lo, hi in zip(q.eps, q.values, q.lower, q.upper):
            print(f"m_{e:g}({a.t:g}) = {v:.4f}  [{lo:.4f}, {hi:.4f}]")
    print(f"{a.n} trees, mean max {np.mean(mx):.4f}, truncated {int(np.sum(st == 1))}")


# --------------------------------------------------------------------------
# pde

def cmd_solve_fkpp(a):
    env = _env(a.env)
    sol = pde.solve_fkpp(env, _dist(a.offspring), pde.FkppRun(y=a.y, t_end=a.t_end, dx=a.dx, dt=a.dt,
                                                               snapshots=(a.t_end,)))
    g = sol.snapshots[0]
    _write_rows(a.out, ["x", "w"], zip(g.x, g.values))


def cmd_solve_pam(a):
    env = _env(a.env)
    lo, hi = (float(v) for v in a.init.split(":"))
    g = pde.guard_width(a.t_end)
    reach = math.sqrt(2 * env.es) * a.t_end + 2 * g
    x = pde._grid(lo - reach, hi + reach, a.dx)
    init = pde.GridFunction(x[0], a.dx, ((x >= lo) & (x <= hi)).astype(float))
    u = pde.solve_pam(env, init, a.t_end, a.dt)
    _write_rows(a.out, ["x", "u"], zip(u.x, u.values))


def cmd_quantiles(a):
    env = _env(a.env)
    ys = _floats(a.y)
    ts = _floats(a.t)
    qt = pde.quantile_table(env, _dist(a.offspring), ys, ts, dx=a.dx, dt=a.dt)
    eps = [float(e) for e in a.eps.split(",")]
    cols = [qt.quantile(e) for e in eps]
    _write_rows(a.out, ["t"] + [f"m_{e:g}" for e in eps], zip(ts, *cols))


def cmd_sturmian(a):
    env = _env(a.env)
    tg = _floats(a.t)
    r = pde.sturmian_check(env, _dist(a.offspring), a.y1, a.y2, a.shift, tg, dx=a.dx, dt=a.dt)
    _write_rows(a.out, ["t", "count"], zip(tg, r.counts))
    print(f"deadband {r.deadband:.3g}; counts <= 1 and non-increasing: {r.ok}", file=sys.stderr)
    return 0 if r.ok else 2


# --------------------------------------------------------------------------
# tilt

def cmd_solve_b(a):
    env = _env(a.env)
    tm = tilt.solve_b(env, a.eta, (a.lo, a.hi), h=a.h)
    keep = tm.retained
    _write_rows(a.out, ["x", "b", "ln_z"], zip(tm.x[keep], tm.b[keep], tm.ln_z[keep]))


def cmd_tilt_simulate(a):
    env = _env(a.env)
    tm = tilt.solve_b(env, a.eta, (a.x - 1.0, a.y + 1.0))
    s = tilt.simulate_tilted(tm, a.x, a.y, a.n, a.seed, a.dt)
    if a.out:
        tilt.write_hitting_csv(a.out, s)
    H = s.H[~s.censored]
    print(f"mean H {H.mean():.5f}, expected {tilt.expected_hitting_time(tm, a.x, a.y):.5f}, "
          f"censored {s.censored_fraction:.3%}")


def cmd_calibrate(a):
    env = _env(a.env)
    rows = [tilt.calibrate_eta(env, a.x, a.y, v) for v in _floats(a.v)]
    if a.out:
        tilt.write_calibration_csv(a.out, rows)
    for c in rows:
        print(f"v={c.v:g}: eta={'none' if c.eta is None else f'{c.eta:.8g}'} residual={c.residual:.3g}")


def cmd_barrier(a):
    env = _env(a.env)
    s = tilt.barrier_event_stats(env, a.eta, a.y, a.t, a.v, a.K, a.L, a.n, a.dt, a.seed)
    for name in ("good", "hit_by_t", "early", "late", "barrier_early", "last_window"):
        e = getattr(s, name)
        print(f"{name:14s} {e.value:.5f} +- {e.se:.5f}")
    print(f"step-3 slack {s.step3_slack():.2f} se, step-4 slack {s.step4_slack():.2f} se")


# --------------------------------------------------------------------------
# lab

def _report(man):
    print(json.dumps({"experiment": man.experiment, "config_hash": man.config_hash, "checks": man.checks,
                      "wall_clock": round(man.wall_clock, 2)}, indent=1))
    return 0 if man.passed else 2


def cmd_lab_run(a):
    from .lab import ExperimentConfig, run
    return _report(run(ExperimentConfig.from_file(a.config)))


def cmd_lab_figure1(a):
    from .lab import ExperimentConfig, run
    d = {"experiment": "figure1", "seed": a.seed, "env_seeds": tuple(int(s) for s in a.seeds.split(",")),
         "out": a.out}
    if a.t_end is not None:
        d["t_end"] = a.t_end
    return _report(run(ExperimentConfig.from_dict(d)))


def cmd_lab_check(a):
    from .lab import ExperimentConfig, run
    d = {"experiment": a.suite, "seed": a.seed, "out": a.out}
    for item in a.set or []:
        k, v = item.split("=", 1)
        d[k.strip()] = v.strip()
    from .lab.config import parse_config_text
    d.update(parse_config_text("\n".join(f"{k} = {v}" for k, v in d.items() if isinstance(v, str)
                                         and k not in ("experiment", "out"))))
    return _report(run(ExperimentConfig.from_dict(d)))


def build_parser():
    ap = argparse.ArgumentParser(prog="bbmre", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"bbmre {__version__} ({BACKEND})")
    top = ap.add_subparsers(dest="group", required=True)

    def offspring(p):
        p.add_argument("--offspring", help="k=p list, e.g. 1=0.2,2=0.5,3=0.3 (default binary)")

    g = top.add_parser("env", help="sample and inspect environments").add_subparsers(dest="cmd", required=True)
    p = g.add_parser("sample")
    p.add_argument("--kind", choices=KINDS, default="interpolated-iid")
    p.add_argument("--ei", type=float, required=True)
    p.add_argument("--es", type=float, required=True)
    p.add_argument("--dx", type=float, default=1.0)
    p.add_argument("--x-lo", type=float, default=-100.0)
    p.add_argument("--x-hi", type=float, default=100.0)
    p.add_argument("--marginal", choices=MARGINALS, default="uniform")
    p.add_argument("--p-high", type=float, default=0.5)
    p.add_argument("--mean-low", type=float, default=20.0)
    p.add_argument("--mean-high", type=float, default=20.0)
    p.add_argument("--ramp", type=float, default=1.0)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--block", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_env_sample)
    p = g.add_parser("show")
    p.add_argument("file")
    p.set_defaults(func=cmd_env_show)

    g = top.add_parser("branching", help="exact tree simulation").add_subparsers(dest="cmd", required=True)
    p = g.add_parser("maxima")
    p.add_argument("--env", required=True, help="environment file or const:VALUE[:LO:HI]")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--x0", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", default="0.01,0.5,0.99")
    p.add_argument("--out")
    offspring(p)
    p.set_defaults(func=cmd_branching_maxima)

    g = top.add_parser("pde", help="F-KPP and PAM solvers").add_subparsers(dest="cmd", required=True)
    p = g.add_parser("solve-fkpp")
    p.add_argument("--env", required=True)
    p.add_argument("--y", type=float, required=True)
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--dx", type=float, default=0.1)
    p.add_argument("--dt", type=float)
    p.add_argument("--out")
    offspring(p)
    p.set_defaults(func=cmd_solve_fkpp)
    p = g.add_parser("solve-pam")
    p.add_argument("--env", required=True)
    p.add_argument("--init", default="0:1", help="indicator of [a, b] as a:b")
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--dx", type=float, default=0.1)
    p.add_argument("--dt", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve_pam)
    p = g.add_parser("quantiles")
    p.add_argument("--env", required=True)
    p.add_argument("--y", required=True, help="lo:hi:step or comma list")
    p.add_argument("--t", required=True, help="lo:hi:step or comma list")
    p.add_argument("--eps", default="0.01,0.5,0.99")
    p.add_argument("--dx", type=float, default=0.1)
    p.add_argument("--dt", type=float)
    p.add_argument("--out")
    offspring(p)
    p.set_defaults(func=cmd_quantiles)
    p = g.add_parser("sturmian")
    p.add_argument("--env", required=True)
    p.add_argument("--y1", type=float, required=True)
    p.add_argument("--y2", type=float, required=True)
    p.add_argument("--shift", type=float, required=True, help="time shift of the second solution")
    p.add_argument("--t", required=True, help="lo:hi:step or comma list")
    p.add_argument("--dx", type=float, default=0.1)
    p.add_argument("--dt", type=float)
    p.add_argument("--out")
    offspring(p)
    p.set_defaults(func=cmd_sturmian)

    g = top.add_parser("tilt", help="tilted path measures").add_subparsers(dest="cmd", required=True)
    p = g.add_parser("solve-b")
    p.add_argument("--env", required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--lo", type=float, required=True)
    p.add_argument("--hi", type=float, required=True)
    p.add_argument("--h", type=float, default=0.01)
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve_b)
    p = g.add_parser("simulate")
    p.add_argument("--env", required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--y", type=float, required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--dt", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_tilt_simulate)
    p = g.add_parser("calibrate")
    p.add_argument("--env", required=True)
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--y", type=float, required=True)
    p.add_argument("--v", required=True, help="speed or comma list")
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)
    p = g.add_parser("barrier-stats")
    p.add_argument("--env", required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--y", type=float, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--v", type=float, required=True)
    p.add_argument("--K", type=float, required=True)
    p.add_argument("--L", type=float, required=True)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--dt", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_barrier)

    g = top.add_parser("lab", help="experiments").add_subparsers(dest="cmd", required=True)
    p = g.add_parser("run")
    p.add_argument("config")
    p.set_defaults(func=cmd_lab_run)
    p = g.add_parser("figure1")
    p.add_argument("--seeds", default="1,2")
    p.add_argument("--t-end", type=float, help="horizon (default from the experiment config)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_lab_figure1)
    p = g.add_parser("check")
    p.add_argument("suite")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default="out")
    p.add_argument("--set", action="append", help="override key=value (repeatable)")
    p.set_defaults(func=cmd_lab_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = args.func(args)
    except Exception as exc:  # report, do not dump a traceback at the user
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
