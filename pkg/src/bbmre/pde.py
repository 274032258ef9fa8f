"""Finite-difference solvers for the randomised F-KPP equation and the
parabolic Anderson model, and the front / quantile / crossing analytics
built on them.

The default scheme is theta = 1/2 in the diffusion with an explicit reaction
term.  With ``dt <= dx**2`` the one-step map is a product of totally positive
tridiagonal matrices, so it preserves order, keeps values in [0, 1] and cannot
create sign changes of differences of solutions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import kernels
from ._backend import USE_NUMBA
from .branching import OffspringDistribution
from .env import EnvError, Environment, LatticeEnvironment, eval_potential


# probe-only solves: settled values within SETTLE_TOL of 1 are frozen, and a
# row stops once its probe value is within DONE_TOL of 1
SETTLE_TOL = 1e-14
DONE_TOL = 1e-9


class PDEError(RuntimeError):
    pass


@dataclass
class GridFunction:
    x_lo: float
    dx: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not self.dx > 0:
            raise ValueError("dx must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")

    @property
    def x(self) -> np.ndarray:
        return self.x_lo + self.dx * np.arange(self.values.size)

    @property
    def x_hi(self) -> float:
        return self.x_lo + self.dx * (self.values.size - 1)

    def __call__(self, x):
        return np.interp(x, self.x, self.values)

    def __len__(self):
        return self.values.size


def nonlinearity_F(dist: OffspringDistribution, w):
    """F(w) = (1 - w) - sum_k p_k (1 - w)^k."""
    wa = np.asarray(w, dtype=np.float64)
    if np.any((wa < 0) | (wa > 1)):
        raise ValueError("F is defined on [0, 1]")
    out = kernels._reaction_np(wa, 1.0, np.asarray(dist.p), kernels.FKPP)
    return float(out) if out.ndim == 0 else out


def guard_width(t: float) -> float:
    return 10.0 + 4.0 * math.sqrt(max(t, 0.0))


def default_dt(dx: float, scheme: str = "theta") -> float:
    return min(0.05, dx * dx if scheme == "theta" else 0.45 * dx * dx)


def check_dt(dt: float, dx: float, scheme: str, theta: float = 0.5) -> None:
    if scheme == "explicit":
        if dt > 0.9 * dx * dx / 2 * (1 + 1e-12):
            raise PDEError(f"explicit scheme unstable: dt={dt} > 0.9 dx^2/2")
    elif scheme == "theta":
        # totally positive step matrix needs (1-theta) dt / (2 dx^2) <= 1/3
        if (1.0 - theta) * dt / (2 * dx * dx) > 1 / 3 + 1e-12:
            raise PDEError(f"dt={dt} too large for an order-preserving theta step at dx={dx}")
    else:
        raise ValueError(f"unknown scheme {scheme!r}")


def heaviside(x: np.ndarray, y: float, dx: float, right: bool = True) -> np.ndarray:
    """Cell averages of 1_{[y, inf)} (or of 1_{(-inf, y]} when ``right`` is false)."""
    frac = np.clip((x + 0.5 * dx - y) / dx, 0.0, 1.0)
    return frac if right else 1.0 - frac


def _grid(lo: float, hi: float, dx: float) -> np.ndarray:
    # nodes on the lattice dx * Z so that x = 0 is always a node
    i0 = math.floor(lo / dx + 1e-9)
    i1 = math.ceil(hi / dx - 1e-9)
    return dx * np.arange(i0, i1 + 1)


def fkpp_window(ys, t_end: float, es: float, dx: float, x_probe: float = 0.0):
    """Grid wide enough that fronts started at ``ys`` stay clear of the boundary guard bands."""
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    g = guard_width(t_end)
    lo = min(ys.min(), x_probe) - math.sqrt(2 * es) * t_end - 2 * g
    hi = max(ys.max(), x_probe) + 2 * g
    return _grid(lo, hi, dx)


def _xi_on(env, x):
    try:
        return np.asarray(eval_potential(env, x), dtype=np.float64)
    except EnvError as exc:
        raise EnvError(f"{exc}; the solver window [{x[0]:.2f}, {x[-1]:.2f}] needs a larger environment") from None


@dataclass
class Evolution:
    times: np.ndarray
    snapshots: list          # arrays of shape (rows, nx), one per requested time
    step_times: np.ndarray
    trace: np.ndarray        # (rows, nsteps + 1) values at the probe column
    clamps: int
    final: np.ndarray


def evolve(W0, xi, pcoef, mode, coef, dt, t_end, times=(), theta=0.5, bc=(0, 0),
           probe=-1, clamp=True, row_lo=None) -> Evolution:
    """Step rows of ``W0`` to ``t_end``; snapshots at ``times`` by linear interpolation between steps.

    ``row_lo = (start, nguard)`` switches F-KPP rows rising from 0 to 1 to the
    probe-only kernel, row r starting right of node ``start[r]``.  Only the
    probe trace is then meaningful.  The numpy backend ignores it and steps
    every node.
    """
    W = np.array(W0, dtype=np.float64, ndmin=2, copy=True)
    nsteps = max(1, math.ceil(t_end / dt - 1e-9)) if t_end > 0 else 0
    h = t_end / nsteps if nsteps else dt
    times = np.sort(np.asarray(times, dtype=float))
    if times.size and (times[0] < 0 or times[-1] > t_end + 1e-12):
        raise ValueError("snapshot times must lie in [0, t_end]")
    trace = np.empty((W.shape[0], nsteps + 1))
    if probe >= 0:
        trace[:, 0] = W[:, probe]
    snaps = []
    done = 0
    clamps = 0

    banded = row_lo is not None and USE_NUMBA and mode == kernels.FKPP and tuple(bc) == (0, 0)
    # rows starting at 1 on the probe dip before they settle, so they never stop
    finished = np.where(W[:, probe] > 0.5, 2, 0).astype(np.uint8) if probe >= 0 else np.full(W.shape[0], 2, np.uint8)
    if banded:
        lo = np.array(row_lo[0], dtype=np.int64)
        row_guard = int(row_lo[1])

    def advance(k):
        nonlocal done, clamps
        if k > done:
            if banded:
                clamps += kernels.probe_rows_steps(W, xi, pcoef, coef, h, theta, k - done, lo, finished,
                                                   clamp, probe, trace, done + 1, SETTLE_TOL, DONE_TOL, row_guard)
            else:
                clamps += kernels.theta_steps(W, xi, pcoef, mode, coef, h, theta, k - done, bc, clamp,
                                              probe, trace, done + 1)
            done = k

    for t in times:
        u = t / h
        k = int(math.floor(u + 1e-9))
        frac = u - k
        advance(k)
        if frac < 1e-9:
            snaps.append(W.copy())
        else:
            prev = W.copy()
            advance(k + 1)
            snaps.append((1 - frac) * prev + frac * W)
    advance(nsteps)
    return Evolution(times, snaps, h * np.arange(nsteps + 1), trace, clamps, W)


def _contamination(W, x, t_end, tol=1e-6):
    g = guard_width(t_end)
    left = x < x[0] + g
    right = x > x[-1] - g
    for rows in np.atleast_2d(W):
        if np.any(np.abs(rows[left] - rows[0]) > tol) or np.any(np.abs(rows[right] - rows[-1]) > tol):
            raise PDEError("front entered the boundary guard band; widen the window")


def _probe_start(x, ys, t_end):
    # probe-only rows start two guard widths left of min(y, 0) and widen as needed
    g = guard_width(t_end)
    return np.searchsorted(x, np.minimum(ys, 0.0) - 2 * g) - 1


@dataclass
class FkppRun:
    """One F-KPP solve: Heaviside datum 1_{[y, inf)} or an explicit initial GridFunction."""

    y: float | None = None
    init: GridFunction | None = None
    t_end: float = 1.0
    dt: float | None = None
    dx: float = 0.1
    snapshots: tuple = ()
    scheme: str = "theta"
    theta: float = 0.5

    def __post_init__(self):
        if (self.y is None) == (self.init is None):
            raise ValueError("give exactly one of y or init")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")
        if self.dt is None:
            self.dt = default_dt(self.dx if self.init is None else self.init.dx, self.scheme)


@dataclass
class FkppSolution:
    snapshots: list
    times: np.ndarray
    step_times: np.ndarray
    trace0: np.ndarray | None
    clamps: int


def solve_fkpp(env: Environment, dist: OffspringDistribution, run: FkppRun) -> FkppSolution:
    """Solve w_t = w_xx / 2 + xi F(w).  ``trace0`` holds w(t, 0) at every step when 0 is a node."""
    if run.init is not None:
        x = run.init.x
        w0 = run.init.values
        dx = run.init.dx
        if np.any((w0 < 0) | (w0 > 1)):
            raise ValueError("F-KPP data must take values in [0, 1]")
    else:
        dx = run.dx
        x = fkpp_window([run.y], run.t_end, env.es, dx)
        w0 = heaviside(x, run.y, dx)
    theta = 0.0 if run.scheme == "explicit" else run.theta
    check_dt(run.dt, dx, run.scheme, theta)
    xi = _xi_on(env, x)
    probe = int(np.argmin(np.abs(x))) if x[0] <= 0 <= x[-1] else -1
    if probe >= 0 and abs(x[probe]) > 1e-9 * max(1.0, dx):
        probe = -1
    if run.t_end == 0:
        return FkppSolution([GridFunction(x[0], dx, w0.copy()) for _ in run.snapshots],
                            np.asarray(run.snapshots, float), np.zeros(1),
                            np.array([w0[probe]]) if probe >= 0 else None, 0)
    ev = evolve(w0, xi, np.asarray(dist.p), kernels.FKPP, 0.5 / dx**2, run.dt, run.t_end,
                run.snapshots, theta, probe=probe)
    _contamination(ev.final, x, run.t_end)
    snaps = [GridFunction(x[0], dx, s[0]) for s in ev.snapshots]
    return FkppSolution(snaps, ev.times, ev.step_times, ev.trace[0] if probe >= 0 else None, ev.clamps)


def solve_fkpp_rows(env, dist, ys, t_end, dx=0.1, dt=None, times=(), check=True, probe_only=False):
    """w^y for every y in ``ys`` on one shared grid.  Returns (x, Evolution).

    With ``probe_only`` only ``ev.trace`` (w^y(t, 0)) is computed faithfully:
    each row is cut off a margin left of min(y, 0) and stops once w^y(t, 0)
    is within ``DONE_TOL`` of 1.
    """
    dt = default_dt(dx) if dt is None else dt
    check_dt(dt, dx, "theta")
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    x = fkpp_window(ys, t_end, env.es, dx)
    W0 = np.stack([heaviside(x, y, dx) for y in ys])
    probe = int(np.argmin(np.abs(x)))
    row_lo = (_probe_start(x, ys, t_end), math.ceil(guard_width(t_end) / dx)) if probe_only else None
    ev = evolve(W0, _xi_on(env, x), np.asarray(dist.p), kernels.FKPP, 0.5 / dx**2, dt, t_end, times, probe=probe,
                row_lo=row_lo)
    if check:
        _contamination(ev.final, x, t_end)
    return x, ev


def solve_pam(env: Environment, init: GridFunction, t_end: float, dt: float | None = None) -> GridFunction:
    """u_t = u_xx / 2 + xi u with reflecting ends on the grid of ``init``."""
    if t_end < 0:
        raise ValueError("t_end must be non-negative")
    if np.any(init.values < 0):
        raise ValueError("PAM data must be non-negative")
    if t_end == 0:
        return GridFunction(init.x_lo, init.dx, init.values.copy())
    dt = default_dt(init.dx) if dt is None else dt
    check_dt(dt, init.dx, "theta")
    xi = _xi_on(env, init.x)
    ev = evolve(init.values, xi, np.zeros(1), kernels.LINEAR_SPLIT, 0.5 / init.dx**2, dt, t_end,
                (t_end,), bc=(kernels.NEUMANN, kernels.NEUMANN), clamp=False)
    return GridFunction(init.x_lo, init.dx, ev.snapshots[0][0])


# --------------------------------------------------------------------------
# lattice model

def lattice_speed_bound(es: float, kappa: float) -> float:
    """Linear spreading speed of the lattice walk with rate-``es`` binary branching."""
    res = minimize_scalar(lambda th: (kappa * (math.cosh(th) - 1) + es) / th, bounds=(1e-3, 30), method="bounded")
    return float(res.fun)


@dataclass
class LatticeSolution:
    sites: np.ndarray
    step_times: np.ndarray
    trace: np.ndarray       # (rows, nsteps + 1) values at site 0
    snapshots: list
    clamps: int


def lattice_window(latenv, ys, t_end):
    ys = np.atleast_1d(ys)
    g = guard_width(t_end)
    v = lattice_speed_bound(latenv.es, latenv.kappa)
    lo = math.floor(min(ys.min(), 0) - v * t_end - 2 * g)
    hi = math.ceil(max(ys.max(), 0) + 2 * g)
    if lo < latenv.site_lo or hi > latenv.site_hi:
        raise EnvError(f"lattice window [{lo}, {hi}] exceeds environment sites "
                       f"[{latenv.site_lo}, {latenv.site_hi}]")
    return np.arange(lo, hi + 1)


def solve_lattice_fkpp(latenv: LatticeEnvironment, dist: OffspringDistribution, y, t_end: float,
                       dt: float = 0.02, times=(), check=True, probe_only=False) -> LatticeSolution:
    """dw_x/dt = kappa/2 (w_{x+1} + w_{x-1} - 2 w_x) + xi_x F(w_x), w(0) = 1_{x >= y}.

    ``y`` may be a sequence, giving one row per level.  ``probe_only`` as in
    :func:`solve_fkpp_rows`.
    """
    ys = np.atleast_1d(np.asarray(y, dtype=np.int64))
    sites = lattice_window(latenv, ys, t_end)
    if latenv.kappa * dt / 2 / 2 > 1 / 3:
        raise PDEError("dt too large for the lattice step")
    W0 = (sites[None, :] >= ys[:, None]).astype(np.float64)
    xi = latenv.rate(sites)
    probe = int(np.flatnonzero(sites == 0)[0])
    row_lo = (_probe_start(sites, ys, t_end), math.ceil(guard_width(t_end))) if probe_only else None
    ev = evolve(W0, xi, np.asarray(dist.p), kernels.FKPP, latenv.kappa / 2, dt, t_end, times, probe=probe,
                row_lo=row_lo)
    if check:
        _contamination(ev.final, sites.astype(float), t_end)
    return LatticeSolution(sites, ev.step_times, ev.trace, ev.snapshots, ev.clamps)


# --------------------------------------------------------------------------
# quantiles of the maximum

def _level_crossing(ys, p, level):
    """Leftmost y where the non-increasing sampled function ``p`` drops to ``level``."""
    below = np.flatnonzero(p <= level)
    if below.size == 0 or below[0] == 0:
        return math.nan
    j = below[0]
    p0, p1 = p[j - 1], p[j]
    if p0 == p1:
        return float(ys[j - 1])
    return float(ys[j - 1] + (p0 - level) / (p0 - p1) * (ys[j] - ys[j - 1]))


@dataclass
class QuantileTable:
    t: np.ndarray
    y: np.ndarray
    P: np.ndarray              # P[i, j] = P_0(M(t_i) >= y_j)
    lattice: bool = False
    meta: dict = field(default_factory=dict)

    def quantile(self, eps: float) -> np.ndarray:
        """m_eps(t) on the t-grid by inverse linear interpolation in y."""
        if not 0 < eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        out = np.array([_level_crossing(self.y, row, 1 - eps) for row in self.P])
        if np.any(np.isnan(out)):
            raise PDEError(f"quantile {eps} outside the y-grid for some t")
        # integer maxima: P(M <= y) = 1 - P(M >= y + 1)
        return out - 1.0 if self.lattice else out

    def median(self) -> np.ndarray:
        return self.quantile(0.5)

    def spread(self, lo: float = 0.01, hi: float = 0.99) -> np.ndarray:
        return self.quantile(hi) - self.quantile(lo)


def _sample_trace(step_times, trace, t_grid):
    return np.stack([np.interp(t_grid, step_times, row) for row in trace], axis=1)


def quantile_table(env, dist, y_grid, t_grid, dx: float = 0.1, dt: float | None = None) -> QuantileTable:
    """All w^y(t, 0) for y in ``y_grid`` and t in ``t_grid`` from stacked solves."""
    y_grid = np.asarray(y_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(y_grid) <= 0):
        raise ValueError("y_grid must be increasing")
    t_end = float(t_grid.max())
    if isinstance(env, LatticeEnvironment):
        sol = solve_lattice_fkpp(env, dist, y_grid.astype(np.int64), t_end, dt or 0.02, probe_only=True)
        P = _sample_trace(sol.step_times, sol.trace, t_grid)
        return QuantileTable(t_grid, y_grid, P, lattice=True)
    x, ev = solve_fkpp_rows(env, dist, y_grid, t_end, dx, dt, probe_only=True)
    P = _sample_trace(ev.step_times, ev.trace, t_grid)
    return QuantileTable(t_grid, y_grid, P)


def _first_passage_time(step_times, trace, eps):
    idx = np.flatnonzero(trace >= eps)
    if idx.size == 0:
        return math.nan
    j = idx[0]
    if j == 0:
        return 0.0
    a, b = trace[j - 1], trace[j]
    return float(step_times[j - 1] + (eps - a) / (b - a) * (step_times[j] - step_times[j - 1]))


def temporal_quantile(env, dist, y, eps: float, dt: float | None = None, dx: float = 0.1,
                      t_max: float | None = None):
    """tau_y^eps = inf{t : w^y(t, 0) >= eps}; ``y`` may be an array."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    ys = np.atleast_1d(np.asarray(y, dtype=float))
    if t_max is None:
        t_max = max(ys.max(), 0) / math.sqrt(2 * env.ei) * 1.5 + 10
    x, ev = solve_fkpp_rows(env, dist, ys, t_max, dx, dt, probe_only=True)
    taus = np.array([_first_passage_time(ev.step_times, row, eps) for row in ev.trace])
    if np.any(np.isnan(taus)):
        raise PDEError("temporal quantile not reached before t_max")
    return float(taus[0]) if np.ndim(y) == 0 else taus


# --------------------------------------------------------------------------
# zero crossings and the Sturmian check

def zero_crossings(f: GridFunction, deadband: float = 0.0):
    """Number and locations of sign changes of ``f`` once |f| < deadband is set to zero."""
    if deadband < 0:
        raise ValueError("deadband must be non-negative")
    v = np.asarray(f.values, dtype=float)
    x = f.x
    nz = np.flatnonzero(np.abs(v) >= deadband) if deadband > 0 else np.flatnonzero(v != 0)
    if nz.size < 2:
        return 0, np.empty(0)
    s = np.sign(v[nz])
    flips = np.flatnonzero(s[1:] != s[:-1])
    locs = []
    for k in flips:
        i, j = nz[k], nz[k + 1]
        if j == i + 1:
            locs.append(x[i] - v[i] * (x[j] - x[i]) / (v[j] - v[i]))
        else:
            locs.append(0.5 * (x[i] + x[j]))
    return len(locs), np.array(locs)


@dataclass
class SturmianResult:
    t: np.ndarray
    counts: np.ndarray
    locations: list
    deadband: float

    @property
    def ok(self) -> bool:
        c = self.counts
        return bool(np.all(c <= 1) and np.all(np.diff(c) <= 0))


def _difference_fields(env, dist, y1, y2, T, t_grid, dx, dt):
    t_grid = np.asarray(t_grid, dtype=float)
    t_end = float(t_grid.max() + T)
    x, ev = solve_fkpp_rows(env, dist, [y1, y2], t_end, dx, dt, times=np.concatenate([t_grid, t_grid + T]))
    return x, [ev.snapshots[np.searchsorted(ev.times, t)][0] - ev.snapshots[np.searchsorted(ev.times, t + T)][1]
               for t in t_grid]


def sturmian_check(env, dist, y1: float, y2: float, T: float, t_grid, deadband: float | None = None,
                   dx: float = 0.1, dt: float | None = None) -> SturmianResult:
    """Crossing counts of W(t) = w^{y1}(t) - w^{y2}(t + T) along ``t_grid``."""
    if y2 < y1:
        raise ValueError("need y1 <= y2")
    if T < 0:
        raise ValueError("T must be non-negative")
    dt = default_dt(dx) if dt is None else dt
    t_grid = np.asarray(t_grid, dtype=float)
    x, fields = _difference_fields(env, dist, y1, y2, T, t_grid, dx, dt)
    if deadband is None:
        # ten times the observed time-step error, floored above rounding noise
        _, fine = _difference_fields(env, dist, y1, y2, T, t_grid, dx, dt / 2)
        err = max(float(np.max(np.abs(a - b))) for a, b in zip(fields, fine))
        deadband = max(10 * err, 1e-12)
    counts, locs = [], []
    for W in fields:
        c, loc = zero_crossings(GridFunction(x[0], dx, W), deadband)
        counts.append(c)
        locs.append(loc)
    return SturmianResult(t_grid, np.array(counts), locs, deadband)


# --------------------------------------------------------------------------
# recentred wave profiles

@dataclass
class WaveProfileResult:
    y: np.ndarray
    tau: np.ndarray
    D: np.ndarray              # sup-norm differences between recentred profiles
    D_to_last: np.ndarray
    monotone_violation_left: float
    monotone_violation_right: float
    tolerance: float

    @property
    def monotone_ok(self) -> bool:
        return max(self.monotone_violation_left, self.monotone_violation_right) <= self.tolerance


def _recentred_profiles(env, dist, ys, eps, window, s_grid, dx, dt):
    taus = temporal_quantile(env, dist, ys, eps, dt, dx)
    times = np.concatenate([[0.0], np.asarray(s_grid, float)])
    profiles = []
    for y, tau in zip(ys, taus):
        t_end = tau + times.max()
        x, ev = solve_fkpp_rows(env, dist, [y], t_end, dx, dt, times=tau + times)
        keep = (x >= window[0] - 1e-9) & (x <= window[1] + 1e-9)
        profiles.append(np.stack([s[0][keep] for s in ev.snapshots]))
    xs = x[keep]
    return taus, xs, profiles


def wave_profile_convergence(env, dist, y_list, eps: float, window=(-5.0, 5.0), s_grid=(0.0, 0.5, 1.0),
                             dx: float = 0.1, dt: float | None = None, tol: float | None = None):
    """Compare w^y(tau_y + s, x) across y on ``window`` x ``s_grid``.

    Also checks that y -> w^y(tau_y, x) is non-decreasing for x < 0 and
    non-increasing for x > 0; ``tol`` defaults to ten times the dt-halving
    difference of the profiles.
    """
    ys = np.asarray(y_list, dtype=float)
    if np.any(np.diff(ys) <= 0):
        raise ValueError("y_list must be increasing")
    dt = default_dt(dx) if dt is None else dt
    taus, xs, prof = _recentred_profiles(env, dist, ys, eps, window, s_grid, dx, dt)
    if tol is None:
        _, _, fine = _recentred_profiles(env, dist, ys, eps, window, s_grid, dx, dt / 2)
        tol = max(10 * max(float(np.max(np.abs(a - b))) for a, b in zip(prof, fine)), 1e-9)
    n = ys.size
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            D[i, j] = float(np.max(np.abs(prof[i][1:] - prof[j][1:])))
    at_tau = np.stack([p[0] for p in prof])
    steps = np.diff(at_tau, axis=0)
    left = xs < 0
    right = xs > 0
    viol_l = float(max(0.0, -steps[:, left].min())) if left.any() and n > 1 else 0.0
    viol_r = float(max(0.0, steps[:, right].max())) if right.any() and n > 1 else 0.0
    return WaveProfileResult(ys, taus, D, D[:, -1], viol_l, viol_r, tol)


# --------------------------------------------------------------------------
# Lyapunov exponent and the speed v0

@dataclass
class LyapunovEstimate:
    v: float
    t: float
    value: float        # two-horizon extrapolation
    at_t: float         # (1/t) ln u(t, 0)
    at_2t: float

    @property
    def gap(self) -> float:
        return self.at_2t - self.at_t


def _pam_log_u0(env, v, t, dx, dt):
    g = guard_width(t)
    x = _grid(-2 * g, v * t + 2 * g, dx)
    init = GridFunction(x[0], dx, heaviside(x, v * t, dx))
    u = solve_pam(env, init, t, dt)
    val = u(0.0)
    if not val > 0:
        raise PDEError("u(t, 0) underflowed")
    return math.log(val)


def lyapunov_estimate(env, v: float, t: float, dx: float = 0.1, dt: float | None = None) -> LyapunovEstimate:
    """(1/t) ln u(t, 0) for the PAM with u(0) = 1_{[vt, inf)}, at horizons t and 2t.

    The value combines both horizons so that the ln(t)/(2t) prefactor
    correction cancels: (2t L_2t - t L_t + ln(2)/2) / t.
    """
    if v <= 0 or t <= 0:
        raise ValueError("need v > 0 and t > 0")
    l1 = _pam_log_u0(env, v, t, dx, dt) / t
    l2 = _pam_log_u0(env, v, 2 * t, dx, dt) / (2 * t)
    value = (2 * t * l2 - t * l1 + 0.5 * math.log(2)) / t
    return LyapunovEstimate(v, t, value, l1, l2)


def v0_estimate(env, t: float, bracket=(0.5, 3.0), tol: float = 1e-3, dx: float = 0.1) -> float:
    """Root of v -> lambda(v) by bisection."""
    a, b = bracket
    fa = lyapunov_estimate(env, a, t, dx).value
    fb = lyapunov_estimate(env, b, t, dx).value
    if fa * fb > 0:
        raise PDEError("bracket does not straddle a sign change of the Lyapunov exponent")
    while b - a > tol:
        m = 0.5 * (a + b)
        fm = lyapunov_estimate(env, m, t, dx).value
        if fa * fm <= 0:
            b = m
        else:
            a, fa = m, fm
    return 0.5 * (a + b)


# --------------------------------------------------------------------------
# transition fronts

def front_width(w: GridFunction, eps: float) -> float:
    """Diameter of {x : eps <= w(x) <= 1 - eps} over grid nodes; 0 if empty."""
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    idx = np.flatnonzero((w.values >= eps) & (w.values <= 1 - eps))
    if idx.size == 0:
        return 0.0
    return float((idx[-1] - idx[0]) * w.dx)


def _front_snapshots(env, dist, t_grid, dx, dt, t_end):
    t_grid = np.asarray(t_grid, dtype=float)
    t_end = float(t_grid.max()) if t_end is None else t_end
    dt = default_dt(dx) if dt is None else dt
    g = guard_width(t_end)
    x = _grid(-2 * g, math.sqrt(2 * env.es) * t_end + 2 * g, dx)
    w0 = heaviside(x, 0.0, dx, right=False)
    ev = evolve(w0, _xi_on(env, x), np.asarray(dist.p), kernels.FKPP, 0.5 / dx**2, dt, t_end, t_grid)
    _contamination(ev.final, x, t_end)
    return x, [s[0] for s in ev.snapshots]


def front_widths(env, dist, t_grid, eps: float = 0.1, dx: float = 0.1, dt: float | None = None,
                 t_end: float | None = None):
    """Width of the transition front of w with datum 1_{(-inf, 0]} along ``t_grid``."""
    x, snaps = _front_snapshots(env, dist, t_grid, dx, dt, t_end)
    return np.array([front_width(GridFunction(x[0], dx, s), eps) for s in snaps])


def front_positions(env, dist, t_grid, level: float = 0.5, dx: float = 0.1, dt: float | None = None):
    """Rightmost point where w (datum 1_{(-inf, 0]}) falls through ``level``, along ``t_grid``."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    x, snaps = _front_snapshots(env, dist, t_grid, dx, dt, None)
    out = []
    for w in snaps:
        j = np.flatnonzero(w >= level)
        if j.size == 0 or j[-1] + 1 >= w.size:
            raise PDEError("level not crossed inside the window")
        k = j[-1]
        out.append(x[k] + (w[k] - level) / (w[k] - w[k + 1]) * dx)
    return np.array(out)
