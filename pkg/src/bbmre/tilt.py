"""Exponentially tilted Brownian motion in the potential zeta + eta.

For eta < 0 the normaliser Z(x) = E_x[exp(int_0^{H_{x0}} (zeta + eta))] solves
Z''/2 + (zeta + eta) Z = 0, and the drift b = (ln Z)' of the tilted diffusion
solves the Riccati equation b' = -2 (zeta + eta) - b**2.  The bounded solution
attracts forward in x, so it is found by integrating left to right through a
burn-in stretch.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.optimize import brentq

from . import kernels
from ._backend import USE_NUMBA
from .branching import replicate_rngs, replicate_seeds
from .env import EnvError, Environment, EnvSpec, constant_environment, eval_potential, sample_environment


class TiltError(RuntimeError):
    pass


BOUND_TOL = 1e-6


def burn_in(eta: float) -> float:
    return 20.0 / math.sqrt(2 * abs(eta))


def drift_bounds(eta: float, ei: float, es: float) -> tuple[float, float]:
    return math.sqrt(2 * abs(eta)), math.sqrt(2 * (es - ei + abs(eta)))


@dataclass(frozen=True)
class TiltedMeasure:
    """Drift table of the tilted diffusion on the grid ``grid_lo + h * k``.

    Only ``[lo, hi]`` (past the burn-in) is meant for use; ``ln_z`` is anchored
    to vanish at ``lo``.  ``p`` is the x-derivative of the mean hitting time.
    """

    env: Environment
    eta: float
    grid_lo: float
    h: float
    b: np.ndarray
    db: np.ndarray
    ln_z: np.ndarray
    p: np.ndarray
    p_int: np.ndarray
    lo: float
    hi: float
    burn: float

    @property
    def x(self) -> np.ndarray:
        return self.grid_lo + self.h * np.arange(self.b.size)

    @property
    def retained(self) -> np.ndarray:
        x = self.x
        return (x >= self.lo - 1e-9) & (x <= self.hi + 1e-9)

    @property
    def bounds(self) -> tuple[float, float]:
        return drift_bounds(self.eta, self.env.ei, self.env.es)

    def drift_table(self):
        return float(self.grid_lo), float(self.h), self.b

    def drift(self, x):
        return np.interp(x, self.x, self.b)

    def _check(self, x):
        xa = np.asarray(x, dtype=float)
        if np.any(xa < self.lo - 1e-9) or np.any(xa > self.hi + 1e-9):
            raise TiltError(f"point outside the retained tilt domain [{self.lo}, {self.hi}]")
        return xa

    def _hermite(self, vals, ders, x):
        xa = self._check(x)
        u = (xa - self.grid_lo) / self.h
        i = np.clip(np.floor(u).astype(np.int64), 0, self.b.size - 2)
        s = u - i
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        out = h00 * vals[i] + h10 * self.h * ders[i] + h01 * vals[i + 1] + h11 * self.h * ders[i + 1]
        return float(out) if out.ndim == 0 else out

    def ln_z_at(self, x):
        return self._hermite(self.ln_z, self.b, x)

    def mean_potential_at(self, x):
        return self._hermite(self.p_int, self.p, x)


def _grid_for(env: Environment, lo: float, hi: float, h_target: float):
    # align the grid with the knots so the potential is linear on every cell
    n_sub = max(1, math.ceil(env.dx / h_target - 1e-9))
    h = env.dx / n_sub
    k0 = math.floor((lo - env.knot_origin) / env.dx + 1e-9)
    k1 = math.ceil((hi - env.knot_origin) / env.dx - 1e-9)
    start = env.knot_origin + k0 * env.dx
    n = (k1 - k0) * n_sub + 1
    return start, h, n


def _corrected_cumint(y, dy, h):
    # trapezoid plus the end correction h^2/12 (y'_i - y'_{i+1}); fourth order
    inc = 0.5 * h * (y[:-1] + y[1:]) + h * h / 12.0 * (dy[:-1] - dy[1:])
    return np.concatenate([[0.0], np.cumsum(inc)])


def solve_b(env: Environment, eta: float, domain, h: float = 0.01, burn: float | None = None,
            check_bounds: bool = True) -> TiltedMeasure:
    """Bounded solution of the Riccati equation on ``domain`` (plus a burn-in to its left)."""
    if not eta < 0:
        raise TiltError("eta must be negative")
    lo, hi = float(domain[0]), float(domain[1])
    if not hi > lo:
        raise TiltError("empty tilt domain")
    burn = burn_in(eta) if burn is None else burn
    start, hh, n = _grid_for(env, lo - burn, hi, h)
    if start < env.x_lo - 1e-9 or start + (n - 1) * hh > env.x_hi + 1e-9:
        raise EnvError(f"tilt domain with burn-in [{start:.2f}, {start + (n - 1) * hh:.2f}] "
                       f"exceeds environment window {env.domain}")
    x = start + hh * np.arange(n)
    x = np.clip(x, env.x_lo, env.x_hi)
    q = np.asarray(eval_potential(env, x)) - env.es + eta
    xm = np.clip(x[:-1] + 0.5 * hh, env.x_lo, env.x_hi)
    qm = np.asarray(eval_potential(env, xm)) - env.es + eta
    b0 = math.sqrt(2 * abs(q[0]))
    b, p = kernels.riccati(q, qm, hh, b0)
    db = -2 * q - b * b
    dp = -2 - 2 * b * p
    i_lo = int(round((lo - start) / hh))
    ln_z = _corrected_cumint(b, db, hh)
    ln_z -= ln_z[i_lo]
    p_int = _corrected_cumint(p, dp, hh)
    tm = TiltedMeasure(env, float(eta), start, hh, b, db, ln_z, p, p_int, lo, hi, burn)
    if check_bounds:
        vlo, vhi = tm.bounds
        kept = b[tm.retained]
        if kept.min() < vlo - BOUND_TOL or kept.max() > vhi + BOUND_TOL:
            raise TiltError("drift left its a-priori bounds; integration failed")
    return tm


def riccati_residual(tm: TiltedMeasure) -> np.ndarray:
    """|b' + b^2 + 2 (zeta + eta)| at cell midpoints of the retained grid.

    b' is the divided difference over the cell and b at the midpoint comes
    from the cubic Hermite interpolant, so the residual is O(h^2).
    """
    b, db, h = tm.b, tm.db, tm.h
    keep = tm.retained
    idx = np.flatnonzero(keep[:-1] & keep[1:])
    slope = (b[idx + 1] - b[idx]) / h
    bm = 0.5 * (b[idx] + b[idx + 1]) + h / 8 * (db[idx] - db[idx + 1])
    xm = tm.grid_lo + h * (idx + 0.5)
    q = np.asarray(eval_potential(tm.env, xm)) - tm.env.es + tm.eta
    return np.abs(slope + bm * bm + 2 * q)


def log_Z(tm: TiltedMeasure, x, y):
    """ln Z_{x,y} = ln Z(x) - ln Z(y) = -int_x^y b."""
    return tm.ln_z_at(x) - tm.ln_z_at(y)


def expected_hitting_time(tm: TiltedMeasure, x, y):
    """E_x[H_y] under the tilted law, as -int_x^y p with p' = -2 - 2 b p."""
    if np.any(np.asarray(x) > y):
        raise TiltError("need x <= y")
    return tm.mean_potential_at(x) - tm.mean_potential_at(y)


# --------------------------------------------------------------------------
# Monte Carlo under the tilted law

def default_dt(eta: float) -> float:
    return 1e-3 * min(1.0, 1.0 / abs(eta))


def _streams(seed, n):
    if USE_NUMBA:
        return replicate_seeds(seed, n), None
    return np.zeros(n, dtype=np.uint32), np.random.default_rng(np.random.SeedSequence([int(seed), 2**31]))


@dataclass
class HittingSamples:
    H: np.ndarray                 # nan where censored
    T_barrier: np.ndarray         # nan where the barrier was not reached
    log_weight: np.ndarray | None
    t_max: float

    @property
    def censored(self) -> np.ndarray:
        return np.isnan(self.H)

    @property
    def censored_fraction(self) -> float:
        return float(np.mean(self.censored))


def simulate_tilted(tm: TiltedMeasure, x0: float, y_target: float, n: int = 1, seed: int = 0,
                    dt: float | None = None, t_max: float = math.inf, barrier=None) -> HittingSamples:
    """Euler-Maruyama paths of dX = dB + b(X) dt stopped at the bridge-corrected passage of y_target."""
    if not x0 < y_target:
        raise TiltError("need x0 < y_target")
    tm._check([x0, y_target])
    dt = default_dt(tm.eta) if dt is None else dt
    if not math.isfinite(t_max):
        # the drift is at least sqrt(2|eta|); 50 mean crossing times is never reached in practice
        t_max = 50 * (y_target - x0) / tm.bounds[0] + 50
    seeds, rng = _streams(seed, n)
    x = tm.x
    H, T, _, st = kernels.hit_batch(x0, y_target, dt, t_max, tm.drift_table(), None, 0.0, barrier,
                                    (x[0], x[-1]), seeds, rng)
    if np.any(st == kernels.EXITED):
        raise TiltError("a tilted path left the drift table")
    return HittingSamples(H, T, None, t_max)


def simulate_bm_weighted(env: Environment, eta: float, x0: float, y: float, n: int, seed: int,
                         dt: float, t_max: float) -> HittingSamples:
    """Plain Brownian hitting times of y with log-weights int_0^H (zeta + eta); censored paths get weight 0."""
    seeds, rng = _streams(seed, n)
    zero = (0.0, 1.0, np.zeros(2))
    H, T, I, st = kernels.hit_batch(x0, y, dt, t_max, zero, env.table(), eta - env.es, None,
                                    env.domain, seeds, rng)
    if np.any(st == kernels.EXITED):
        raise EnvError("a Brownian path left the environment window")
    I = np.where(np.isnan(H), -np.inf, I)
    return HittingSamples(H, T, I, t_max)


def weighted_ks(a, b, wb) -> float:
    """sup |F_a - F_b^w| between an ECDF and a weighted ECDF."""
    a = np.sort(a)
    order = np.argsort(b)
    b = b[order]
    wb = wb[order] / wb.sum()
    grid = np.concatenate([a, b])
    Fa = np.searchsorted(a, grid, side="right") / a.size
    cw = np.concatenate([[0.0], np.cumsum(wb)])
    Fb = cw[np.searchsorted(b, grid, side="right")]
    return float(np.max(np.abs(Fa - Fb)))


def kish_ess(w) -> float:
    w = np.asarray(w, dtype=float)
    s2 = np.sum(w * w)
    return float(np.sum(w) ** 2 / s2) if s2 > 0 else 0.0


def ks_threshold(n: int, n_eff: float, alpha: float = 0.01) -> float:
    """Two-sample KS critical value with the weighted side counted by its effective size."""
    c = math.sqrt(-0.5 * math.log(alpha / 2))
    return c * math.sqrt(1.0 / n + 1.0 / n_eff)


@dataclass
class GirsanovReport:
    ks: float
    threshold: float
    n_eff: float
    mean_weight: float
    mean_weight_se: float
    z_xy: float

    @property
    def ks_ok(self) -> bool:
        return self.ks <= self.threshold

    @property
    def weight_ok(self) -> bool:
        return abs(self.mean_weight - self.z_xy) <= 3 * self.mean_weight_se


def girsanov_crosscheck(env: Environment, eta: float, x: float, y: float, n: int = 5000, dt: float | None = None,
                        seed: int = 0, tm: TiltedMeasure | None = None,
                        ks_constant: float | None = None) -> GirsanovReport:
    """Tilted-SDE hitting law against Brownian hitting times reweighted by exp(int (zeta + eta)) / Z_{x,y}."""
    dt = default_dt(eta) if dt is None else dt
    if tm is None:
        tm = solve_b(env, eta, (x - 1.0, y + 1.0))
    z = math.exp(log_Z(tm, x, y))
    tilted = simulate_tilted(tm, x, y, n, seed, dt)
    if tilted.censored.any():
        raise TiltError("tilted hitting times censored; raise t_max")
    t_max = 30.0 / abs(eta)
    bm = simulate_bm_weighted(env, eta, x, y, n, seed + 1, dt, t_max)
    w = np.exp(bm.log_weight)
    n_eff = kish_ess(w)
    if n_eff < 100:
        raise TiltError(f"effective sample size {n_eff:.0f} < 100")
    hit = ~bm.censored
    ks = weighted_ks(tilted.H, bm.H[hit], w[hit])
    thr = ks_threshold(n, n_eff) if ks_constant is None else ks_constant * math.sqrt(1.0 / n + 1.0 / n_eff)
    return GirsanovReport(ks, thr, n_eff, float(w.mean()),
                          float(w.std(ddof=1) / math.sqrt(n)), z)


def calibrate_ks_constant(eta: float, d: float, n: int, t_max: float, reps: int = 200, alpha: float = 0.01,
                          seed: int = 0) -> tuple[float, float]:
    """Critical constants for the weighted KS distances, from exact zero-potential samples.

    Tilted passage times over distance d are inverse Gaussian (mean d / b,
    shape d^2, b = sqrt(2|eta|)); Brownian ones are d^2 / Z^2 with weight
    exp(eta H), zero past ``t_max``.  Returns the (1 - alpha) quantiles of
    KS / sqrt(1/n + 1/n_eff) for the pair and of KS * sqrt(n_eff) for the
    weighted sample against the exact law.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 77]))
    b = math.sqrt(2 * abs(eta))
    law = stats.invgauss(mu=1.0 / (b * d), scale=d * d)
    pair, one = [], []
    for _ in range(reps):
        ht = law.rvs(size=n, random_state=rng)
        hb = d * d / rng.standard_normal(n) ** 2
        hit = hb <= t_max
        w = np.exp(eta * hb[hit])
        n_eff = kish_ess(w)
        pair.append(weighted_ks(ht, hb[hit], w) / math.sqrt(1.0 / n + 1.0 / n_eff))
        one.append(_weighted_ks_exact(hb[hit], w, law.cdf) * math.sqrt(n_eff))
    return float(np.quantile(pair, 1 - alpha)), float(np.quantile(one, 1 - alpha))


def _weighted_ks_exact(h, w, cdf) -> float:
    order = np.argsort(h)
    h, w = h[order], w[order] / w.sum()
    cw = np.cumsum(w)
    F = cdf(h)
    return float(max(np.max(np.abs(cw - F)), np.max(np.abs(cw - w - F))))


@dataclass
class GirsanovNull:
    ks_pair: float          # tilted SDE against reweighted BM
    ks_tilted: float        # tilted SDE against the exact law
    ks_weighted: float      # reweighted BM against the exact law
    threshold_pair: float
    threshold_tilted: float
    threshold_weighted: float

    @property
    def ok(self) -> bool:
        return (self.ks_pair <= self.threshold_pair and self.ks_tilted <= self.threshold_tilted
                and self.ks_weighted <= self.threshold_weighted)


def girsanov_null(eta: float, d: float, n: int = 5000, dt: float | None = None, seed: int = 0,
                  constants: tuple[float, float] | None = None) -> GirsanovNull:
    """The simulated cross-check with zero potential, where both hitting laws are inverse Gaussian.

    Discretisation error of either simulator shows up as a distance to the
    exact law beyond the calibrated thresholds.
    """
    t_max = 30.0 / abs(eta)
    if constants is None:
        constants = calibrate_ks_constant(eta, d, n, t_max, seed=seed)
    c_pair, c_one = constants
    env = constant_environment(1.0, -80.0, d + 20.0)
    dt = default_dt(eta) if dt is None else dt
    tm = solve_b(env, eta, (-1.0, d + 1.0))
    tilted = simulate_tilted(tm, 0.0, d, n, seed, dt)
    bm = simulate_bm_weighted(env, eta, 0.0, d, n, seed + 1, dt, t_max)
    w = np.exp(bm.log_weight)
    hit = ~bm.censored
    b = math.sqrt(2 * abs(eta))
    law = stats.invgauss(mu=1.0 / (b * d), scale=d * d)
    n_eff = kish_ess(w)
    ks_t = float(stats.kstest(tilted.H, law.cdf).statistic)
    one_sample = math.sqrt(-0.5 * math.log(0.01 / 2))
    return GirsanovNull(weighted_ks(tilted.H, bm.H[hit], w[hit]), ks_t, _weighted_ks_exact(bm.H[hit], w[hit], law.cdf),
                        c_pair * math.sqrt(1.0 / n + 1.0 / n_eff), one_sample / math.sqrt(n),
                        c_one / math.sqrt(n_eff))


# --------------------------------------------------------------------------
# calibration of the tilt

@dataclass
class Calibration:
    x: float
    y: float
    v: float
    eta: float | None
    residual: float
    tm: TiltedMeasure | None

    @property
    def found(self) -> bool:
        return self.eta is not None


def calibrate_eta(env: Environment, x: float, y: float, v: float, h: float = 0.01,
                  rtol: float = 1e-10) -> Calibration:
    """eta with E_x^eta[H_y] = (y - x) / v, or an explicit no-solution result."""
    if not v > 0:
        raise ValueError("v must be positive")
    if not y > x:
        raise ValueError("need x < y")
    target = (y - x) / v
    # from the drift bounds, mean speed v needs v^2/2 - (es - ei) <= |eta| <= v^2/2
    a = -(0.5 * v * v) * 1.01 - 1e-3
    b = -max(0.5 * v * v - (env.es - env.ei), 1e-6) * 0.99
    # weaker tilts need a burn-in longer than the environment provides
    room = x - env.x_lo - 2 * env.dx
    b = min(b, -0.5 * (20.0 / room) ** 2 if room > 0 else -1e-6, -1e-6)
    if not a < b:
        return Calibration(x, y, v, None, math.nan, None)

    def f(eta):
        tm = solve_b(env, eta, (x, y), h)
        return float(expected_hitting_time(tm, x, y)) - target

    fa, fb = f(a), f(b)
    if fa * fb > 0:
        return Calibration(x, y, v, None, math.nan, None)
    eta = brentq(f, a, b, xtol=1e-14, rtol=rtol, maxiter=200)
    tm = solve_b(env, eta, (x, y), h)
    res = abs(float(expected_hitting_time(tm, x, y)) - target) / target
    return Calibration(x, y, v, float(eta), res, tm)


def _long_env(spec: EnvSpec, n_cells: int, eta: float, seed: int) -> Environment:
    margin = burn_in(eta) * 1.5 + 2
    return sample_environment(replace(spec, x_lo=-margin, x_hi=n_cells + 2.0), seed)


def annealed_lmgf(spec: EnvSpec, eta: float, n_cells: int = 2000, seed: int = 0, h: float = 0.02,
                  env: Environment | None = None) -> float:
    """Ergodic average of ln Z_{k,k+1} over ``n_cells`` unit cells of one long environment."""
    if not eta < 0:
        raise TiltError("eta must be negative")
    env = _long_env(spec, n_cells, eta, seed) if env is None else env
    tm = solve_b(env, eta, (0.0, float(n_cells)), h)
    return float(log_Z(tm, 0.0, float(n_cells))) / n_cells


def annealed_lmgf_derivative(spec: EnvSpec, eta: float, n_cells: int = 2000, seed: int = 0,
                             h: float = 0.02, env: Environment | None = None) -> tuple[float, float]:
    """Central difference of L at eta (step 1e-3 |eta|) and a step-halving error estimate."""
    if env is None:
        # one environment for every eta so the differences are smooth in eta
        env = _long_env(spec, n_cells, eta * 0.9, seed)
    d = 1e-3 * abs(eta)

    def cd(step):
        return (annealed_lmgf(spec, eta + step, n_cells, seed, h, env)
                - annealed_lmgf(spec, eta - step, n_cells, seed, h, env)) / (2 * step)

    full = cd(d)
    return full, abs(full - cd(d / 2))


def eta_bar(spec: EnvSpec, v: float, n_cells: int = 2000, seed: int = 0, h: float = 0.02) -> float:
    """Solution of L'(eta) = 1/v."""
    if not v > 0:
        raise ValueError("v must be positive")
    a = -(0.5 * v * v) * 1.02 - 1e-3
    b = -max(0.5 * v * v - (spec.es - spec.ei), 1e-4) * 0.98
    env = _long_env(spec, n_cells, b, seed)

    def g(eta):
        return annealed_lmgf_derivative(spec, eta, n_cells, seed, h, env)[0] - 1.0 / v

    ga, gb = g(a), g(b)
    if ga * gb > 0:
        raise TiltError("L'(eta) = 1/v has no root in the a-priori bracket")
    return float(brentq(g, a, b, xtol=1e-10, rtol=1e-10))


def v1_v2(spec: EnvSpec, n_cells: int = 2000, seed: int = 0, h: float = 0.02) -> tuple[float, float]:
    """v1 = sqrt(2 (es + 1)) and v2 = inf{v > v1 + 1 : |eta_bar(v)| >= 2 v1^2 + 2}.

    Since eta_bar is decreasing, |eta_bar(v)| = c exactly at v = 1 / L'(-c).
    """
    v1 = math.sqrt(2 * (spec.es + 1))
    c = 2 * v1 * v1 + 2
    lp, _ = annealed_lmgf_derivative(spec, -c, n_cells, seed, h)
    return v1, max(v1 + 1, 1.0 / lp)


# --------------------------------------------------------------------------
# hitting-time functionals

@dataclass
class Estimate:
    value: float
    se: float

    @property
    def ci95(self) -> tuple[float, float]:
        return self.value - 1.96 * self.se, self.value + 1.96 * self.se


@dataclass
class YFunctionals:
    approx: Estimate
    early: Estimate
    ratio: Estimate
    eta: float


def y_functionals(env: Environment, x: float, y: float, v: float, K: float, eta: float | None = None,
                  n: int = 10000, seed: int = 0, dt: float | None = None, tm: TiltedMeasure | None = None):
    """Importance-sampled E_x[exp(int_0^{H_y} zeta); H_y in [d/v - K, d/v]] and the early counterpart H_y < d/v - K."""
    if eta is None:
        cal = calibrate_eta(env, x, y, v)
        if not cal.found:
            raise TiltError("calibration found no tilt for this speed")
        eta, tm = cal.eta, cal.tm
    if tm is None:
        tm = solve_b(env, eta, (x, y))
    d = y - x
    t_end = d / v
    s = simulate_tilted(tm, x, y, n, seed, dt, t_max=t_end)
    H = np.where(s.censored, np.inf, s.H)
    z = math.exp(log_Z(tm, x, y))
    with np.errstate(over="ignore"):
        g = np.where(np.isfinite(H), np.exp(-eta * np.where(np.isfinite(H), H, 0.0)), 0.0)
    in_win = (H >= t_end - K) & (H <= t_end)
    early = H < t_end - K
    a = z * g * in_win
    b = z * g * early
    if kish_ess(a) < 100 and a.any():
        raise TiltError("effective sample size below 100 for the window functional")
    ea = Estimate(float(a.mean()), float(a.std(ddof=1) / math.sqrt(n)))
    eb = Estimate(float(b.mean()), float(b.std(ddof=1) / math.sqrt(n)))
    if eb.value > 0:
        r = ea.value / eb.value
        cov = np.cov(a, b)[0, 1] / n
        var = r * r * (ea.se**2 / ea.value**2 + eb.se**2 / eb.value**2 - 2 * cov / (ea.value * eb.value)) if ea.value > 0 else math.nan
        ratio = Estimate(r, math.sqrt(max(var, 0.0)))
    else:
        ratio = Estimate(math.nan, math.nan)
    return YFunctionals(ea, eb, ratio, float(eta))


@dataclass
class BarrierStats:
    good: Estimate          # P(H_y <= t, T >= t - K)
    hit_by_t: Estimate      # P(H_y <= t)
    early: Estimate         # P(H_y < t - L)
    late: Estimate          # P(H_y in (t - L, t])
    barrier_early: Estimate  # P(H_y <= t, T <= t - K)
    last_window: Estimate   # P(H_y in [t - L, t])
    n: int

    def step3_slack(self) -> float:
        """Standardised excess of P(H<=t, T<=t-K) over 2 P(H<t-L); positive values beyond ~3 refute the bound."""
        d = self.barrier_early.value - 2 * self.early.value
        se = math.hypot(self.barrier_early.se, 2 * self.early.se)
        return d / se if se > 0 else (0.0 if d <= 0 else math.inf)

    def step4_slack(self) -> float:
        d = self.early.value - 0.25 * self.hit_by_t.value
        se = math.hypot(self.early.se, 0.25 * self.hit_by_t.se)
        return d / se if se > 0 else (0.0 if d <= 0 else math.inf)


def _bernoulli(mask) -> Estimate:
    p = float(np.mean(mask))
    return Estimate(p, math.sqrt(p * (1 - p) / mask.size))


def check_barrier_params(K: float, L: float) -> None:
    if not (0 < L < K):
        raise ValueError("need 0 < L < K")
    if K < 3 * L:
        raise ValueError("need K >= 3 L (equivalently L / K <= 1/3)")


def barrier_event_stats(env: Environment, eta: float, y: float, t: float, v: float, K: float, L: float,
                        n: int = 10000, dt: float | None = None, seed: int = 0, v1: float | None = None,
                        tm: TiltedMeasure | None = None) -> BarrierStats:
    """Event probabilities for the tilted path from y - v t against the barrier s -> y - v1 (t - s)."""
    check_barrier_params(K, L)
    v1 = math.sqrt(2 * (env.es + 1)) if v1 is None else v1
    x0 = y - v * t
    if tm is None:
        tm = solve_b(env, eta, (x0 - 1.0, y + 1.0))
    s = simulate_tilted(tm, x0, y, n, seed, dt, t_max=t, barrier=(y, v1, t))
    H = np.where(s.censored, np.inf, s.H)
    T = np.where(np.isnan(s.T_barrier), np.inf, s.T_barrier)
    hit = H <= t
    return BarrierStats(
        good=_bernoulli(hit & (T >= t - K)),
        hit_by_t=_bernoulli(hit),
        early=_bernoulli(H < t - L),
        late=_bernoulli((H > t - L) & hit),
        barrier_early=_bernoulli(hit & (T <= t - K)),
        last_window=_bernoulli((H >= t - L) & hit),
        n=n,
    )


@dataclass
class DominanceResult:
    ok: bool
    band: float
    upper_excess: float     # max of F_tilted - F_slow - band (<= 0 when ordered)
    lower_excess: float     # max of F_fast - F_tilted - band
    samples: np.ndarray


def dominance_check(tm: TiltedMeasure, x0: float, t: float, n: int = 10000, seed: int = 0,
                    dt: float | None = None, alpha: float = 0.01) -> DominanceResult:
    """Check that the law of X_t sits between the constant-drift laws with drifts sqrt(2|eta|) and sqrt(2(es-ei+|eta|))."""
    band = math.sqrt(math.log(2 / alpha) / (2 * n))
    if t == 0:
        return DominanceResult(True, band, -band, -band, np.full(n, float(x0)))
    vlo, vhi = tm.bounds
    reach_hi = x0 + vhi * t + 8 * math.sqrt(t)
    reach_lo = x0 + vlo * t - 8 * math.sqrt(t)
    if reach_lo < tm.x[0] or reach_hi > tm.hi:
        raise TiltError("tilt domain too small for the dominance horizon")
    dt = default_dt(tm.eta) if dt is None else dt
    seeds, rng = _streams(seed, n)
    X, st = kernels.endpoint_batch(x0, [t], dt, tm.drift_table(), (tm.x[0], tm.x[-1]), seeds, rng)
    if np.any(st == kernels.EXITED):
        raise TiltError("a tilted path left the drift table")
    xs = np.sort(X[:, 0])
    F_after = np.arange(1, n + 1) / n
    F_before = np.arange(0, n) / n
    slow = stats.norm.cdf((xs - x0 - vlo * t) / math.sqrt(t))
    fast = stats.norm.cdf((xs - x0 - vhi * t) / math.sqrt(t))
    up = float(np.max(F_before - slow)) - band
    low = float(np.max(fast - F_after)) - band
    return DominanceResult(up <= 0 and low <= 0, band, up, low, xs)


# --------------------------------------------------------------------------
# csv

def write_hitting_csv(path, samples: HittingSamples) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replicate", "H", "T_barrier", "weight"])
        lw = samples.log_weight
        for i, h in enumerate(samples.H):
            wt = "" if lw is None else repr(float(np.exp(lw[i])))
            w.writerow([i, repr(float(h)), repr(float(samples.T_barrier[i])), wt])


def write_calibration_csv(path, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "v", "eta", "residual"])
        for c in rows:
            w.writerow([repr(c.x), repr(c.y), repr(c.v), "" if c.eta is None else repr(c.eta), repr(c.residual)])
