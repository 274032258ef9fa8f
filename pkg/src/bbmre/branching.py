"""Exact Monte Carlo for the branching system.

Continuum trees are simulated by thinning: every particle carries a clock of
rate ``es`` and a tick at position ``x`` becomes a branching event with
probability ``xi(x) / es``.  Brownian increments are drawn exactly over the
waiting times, so there is no time discretisation anywhere.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import kernels
from ._backend import USE_NUMBA
from .env import EnvError, Environment, LatticeEnvironment

DEFAULT_CAP = 10**7


class BranchingError(RuntimeError):
    pass


@dataclass(frozen=True)
class OffspringDistribution:
    """Offspring law ``p[k-1] = P(k children)`` for ``k = 1, 2, ...``."""

    p: tuple

    def __post_init__(self):
        p = tuple(float(v) for v in self.p)
        object.__setattr__(self, "p", p)
        if len(p) == 0 or any(v < 0 or not math.isfinite(v) for v in p):
            raise ValueError("offspring probabilities must be finite and non-negative")
        if abs(math.fsum(p) - 1.0) > 1e-12:
            raise ValueError(f"offspring probabilities sum to {math.fsum(p)}, not 1")
        if self.mu <= 1.0:
            raise ValueError(f"mean offspring number must exceed 1, got {self.mu}")

    @classmethod
    def binary(cls):
        return cls((0.0, 1.0))

    @classmethod
    def from_dict(cls, probs: dict):
        """``{k: p_k}`` with ``k >= 1``."""
        if any(k < 1 for k in probs):
            raise ValueError("offspring numbers start at 1 (no death)")
        kmax = max(probs)
        return cls(tuple(probs.get(k, 0.0) for k in range(1, kmax + 1)))

    @property
    def ks(self) -> np.ndarray:
        return np.arange(1, len(self.p) + 1)

    @property
    def mu(self) -> float:
        return math.fsum(k * v for k, v in zip(range(1, len(self.p) + 1), self.p))

    @property
    def mu2(self) -> float:
        return math.fsum(k * k * v for k, v in zip(range(1, len(self.p) + 1), self.p))

    @property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.p)
        c[-1] = 1.0
        return c


def _scaled_env(env, factor):
    if factor == 1.0:
        return env
    if isinstance(env, LatticeEnvironment):
        return LatticeEnvironment(env.rates * factor, env.site_lo, env.ei * factor, env.es * factor,
                                  env.kappa, env.seed, env.spec)
    spec = replace(env.spec, ei=env.spec.ei * factor, es=env.spec.es * factor)
    knots = np.clip(env.knots * factor, spec.ei, spec.es)
    return Environment(spec, knots, env.knot_origin, env.phase, env.x_lo, env.x_hi, env.seed)


def normalize_offspring(dist: OffspringDistribution, env):
    """Rescale to mean two offspring, speeding up the clock to compensate.

    The returned pair generates a process with the same law of positions.
    """
    mu = dist.mu
    if mu <= 1:
        raise ValueError("need mean offspring > 1")
    if mu == 2.0:
        return dist, env
    c = mu - 1.0
    p = [v / c for v in dist.p]
    # p1' = sum_k (k-2) p_k / c over k >= 3, a sum of non-negative terms
    p[0] = math.fsum((k - 1) * v for k, v in enumerate(dist.p[2:], start=2)) / c
    return OffspringDistribution(tuple(p)), _scaled_env(env, c)


@dataclass
class TreeResult:
    positions: np.ndarray
    max: float
    population: int
    branch_events: int
    truncated: bool

    def __post_init__(self):
        if self.population < 1:
            raise ValueError("population cannot be empty")


@dataclass
class QuantileEstimate:
    t: float
    eps: np.ndarray
    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_rep: int

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)


def replicate_seeds(master: int, n: int, start: int = 0) -> np.ndarray:
    """32-bit kernel seeds for replicates ``start .. start+n-1``; each depends only on (master, index)."""
    return np.array([np.random.SeedSequence([int(master), i]).generate_state(1)[0]
                     for i in range(start, start + n)], dtype=np.uint32)


def replicate_rngs(master: int, n: int, start: int = 0):
    return [np.random.default_rng(np.random.SeedSequence([int(master), i])) for i in range(start, start + n)]


def _streams(master, n, start=0):
    if USE_NUMBA:
        return replicate_seeds(master, n, start), None
    return np.zeros(n, dtype=np.uint32), replicate_rngs(master, n, start)


def _check_exit(status):
    if np.any(status == kernels.EXITED):
        raise EnvError("a particle left the environment window; enlarge the domain")


def simulate_tree(env: Environment, dist: OffspringDistribution, x0: float, t: float, seed: int,
                  particle_cap: int = DEFAULT_CAP) -> TreeResult:
    if t < 0:
        raise ValueError("t must be non-negative")
    if not (env.x_lo <= x0 <= env.x_hi):
        raise EnvError("x0 outside the environment window")
    if t == 0:
        return TreeResult(np.array([float(x0)]), float(x0), 1, 0, False)
    seeds, rngs = _streams(seed, 1)
    pos, pop, nb, st = kernels.tree_positions(env.table(), env.es, env.domain, dist.cdf, x0, t,
                                              particle_cap, seeds[0], rngs[0] if rngs else None)
    _check_exit(np.array([st]))
    truncated = st == kernels.TRUNCATED
    mx = float(pos.max()) if pos.size else float("nan")
    return TreeResult(np.asarray(pos), mx, int(pop), int(nb), bool(truncated))


def simulate_lattice_tree(latenv: LatticeEnvironment, dist: OffspringDistribution, x0: int, t: float,
                          seed: int, cap: int = DEFAULT_CAP) -> TreeResult:
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return TreeResult(np.array([int(x0)]), float(x0), 1, 0, False)
    seeds, rngs = _streams(seed, 1)
    pos, pop, nb, st = kernels.lattice_positions(latenv.rates, latenv.site_lo, latenv.kappa, dist.cdf, x0, t,
                                                 cap, seeds[0], rngs[0] if rngs else None)
    _check_exit(np.array([st]))
    mx = float(pos.max()) if pos.size else float("nan")
    return TreeResult(np.asarray(pos), mx, int(pop), int(nb), bool(st == kernels.TRUNCATED))


def sample_maxima(env: Environment, dist: OffspringDistribution, x0: float, t: float, n_rep: int,
                  seed: int, cap: int = DEFAULT_CAP, return_all: bool = False):
    """Independent samples of M(t); replicate ``i`` depends only on ``(seed, i)``."""
    if t <= 0:
        out = np.full(n_rep, float(x0))
        if return_all:
            return out, np.ones(n_rep, dtype=np.int64), np.zeros(n_rep, dtype=np.int64), np.zeros(n_rep, dtype=np.int64)
        return out
    seeds, rngs = _streams(seed, n_rep)
    mx, pop, nb, st = kernels.tree_batch(env.table(), env.es, env.domain, dist.cdf, x0, t, cap, seeds, rngs)
    _check_exit(st)
    if return_all:
        return mx, pop, nb, st
    if np.any(st == kernels.TRUNCATED):
        raise BranchingError("particle cap hit; maxima would be biased")
    return mx


def sample_lattice_maxima(latenv: LatticeEnvironment, dist: OffspringDistribution, x0: int, t: float,
                          n_rep: int, seed: int, cap: int = DEFAULT_CAP, return_all: bool = False):
    seeds, rngs = _streams(seed, n_rep)
    mx, pop, nb, st = kernels.lattice_batch(latenv.rates, latenv.site_lo, latenv.kappa, dist.cdf,
                                            x0, t, cap, seeds, rngs)
    _check_exit(st)
    if return_all:
        return mx, pop, nb, st
    if np.any(st == kernels.TRUNCATED):
        raise BranchingError("particle cap hit; maxima would be biased")
    return mx


def sample_lineage_gaps(env: Environment, x0: float, n: int, seed: int) -> np.ndarray:
    """Times between accepted branch events along one particle line (thinning check)."""
    return kernels.lineage_gaps(env.table(), env.es, x0, n, int(replicate_seeds(seed, 1)[0]))


def quantiles_from_samples(samples, eps_list, t=float("nan"), conf=0.95) -> QuantileEstimate:
    """Order-statistic quantiles with distribution-free binomial intervals."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    eps = np.asarray(eps_list, dtype=float)
    if np.any((eps <= 0) | (eps >= 1)):
        raise ValueError("quantile levels must lie in (0, 1)")
    alpha = 1 - conf
    vals, lo, hi = [], [], []
    for e in eps:
        # the smallest order statistic with empirical CDF >= e
        k = math.ceil(e * n)
        j_lo = int(stats.binom.ppf(alpha / 2, n, e))
        j_hi = int(stats.binom.ppf(1 - alpha / 2, n, e)) + 1
        if j_lo < 1 or j_hi > n:
            raise ValueError(f"quantile level {e} not resolvable with {n} replicates")
        vals.append(x[k - 1])
        lo.append(x[j_lo - 1])
        hi.append(x[j_hi - 1])
    return QuantileEstimate(float(t), eps, np.array(vals), np.array(lo), np.array(hi), n)


def max_quantiles_mc(env, dist, x0, t, n_rep, eps_list, seed, cap: int = DEFAULT_CAP) -> QuantileEstimate:
    if n_rep < 100:
        raise ValueError("need at least 100 replicates")
    if isinstance(env, LatticeEnvironment):
        mx = sample_lattice_maxima(env, dist, int(x0), t, n_rep, seed, cap)
    else:
        mx = sample_maxima(env, dist, x0, t, n_rep, seed, cap)
    return quantiles_from_samples(mx, eps_list, t)


def exceedance(samples, y) -> tuple[float, float]:
    """Empirical P(M >= y) and its standard error."""
    s = np.asarray(samples)
    p = float(np.mean(s >= y))
    return p, math.sqrt(max(p * (1 - p), 1e-300) / s.size)


def write_replicates_csv(path, t, maxima, population, status) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replicate", "t", "max", "population", "truncated"])
        for i, (m, p, s) in enumerate(zip(maxima, population, status)):
            w.writerow([i, repr(float(t)), repr(float(m)), int(p), int(s == kernels.TRUNCATED)])
