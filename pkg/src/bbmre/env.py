"""Random branching environments.

Continuum environments are piecewise-linear interpolants of knot values on a
uniform grid; lattice environments are arrays of site rates.  Both are
immutable once built and can be written to / read from a versioned JSON file.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

FILE_VERSION = 1
KINDS = ("interpolated-iid", "two-valued-blocks", "constant", "lattice-iid")
MARGINALS = ("uniform", "two-point")


class EnvError(ValueError):
    """Invalid environment specification, file or evaluation point."""


@dataclass(frozen=True)
class EnvSpec:
    kind: str
    ei: float
    es: float
    dx: float = 1.0
    x_lo: float = -100.0
    x_hi: float = 100.0
    # interpolated-iid marginal of the knot values
    marginal: str = "uniform"
    p_high: float = 0.5
    # two-valued-blocks: geometric plateau lengths (means) and ramp width
    mean_low: float = 20.0
    mean_high: float = 20.0
    ramp: float = 1.0
    # lattice-iid jump rate and run length of equal site rates
    kappa: float = 1.0
    seed: int = 0
    block: int = 1

    def __post_init__(self):
        validate_spec(self)


def validate_spec(spec: EnvSpec) -> None:
    if spec.kind not in KINDS:
        raise EnvError(f"unknown environment kind {spec.kind!r}")
    if not (spec.ei > 0):
        raise EnvError(f"ei must be > 0, got {spec.ei}")
    if spec.es < spec.ei:
        raise EnvError(f"es must be >= ei, got es={spec.es} < ei={spec.ei}")
    if not math.isfinite(spec.es):
        raise EnvError("es must be finite")
    if not (spec.dx > 0):
        raise EnvError(f"dx must be > 0, got {spec.dx}")
    if not (spec.x_hi > spec.x_lo):
        raise EnvError("empty domain: x_hi must exceed x_lo")
    if spec.kind == "two-valued-blocks":
        if not (spec.ramp > 0):
            raise EnvError("ramp width must be > 0")
        if spec.mean_low < spec.dx or spec.mean_high < spec.dx:
            raise EnvError("mean block lengths must be at least dx")
    if spec.marginal not in MARGINALS:
        raise EnvError(f"unknown marginal {spec.marginal!r}")
    if not (0.0 <= spec.p_high <= 1.0):
        raise EnvError("p_high must lie in [0, 1]")
    if not (spec.kappa > 0):
        raise EnvError("kappa must be > 0")
    if int(spec.block) != spec.block or spec.block < 1:
        raise EnvError("block must be a positive integer")


@dataclass(frozen=True)
class Environment:
    """Piecewise-linear potential with knots at ``knot_origin + k * dx``."""

    spec: EnvSpec
    knots: np.ndarray
    knot_origin: float
    phase: float
    x_lo: float
    x_hi: float
    seed: int = 0

    def __post_init__(self):
        knots = np.array(self.knots, dtype=np.float64)
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        if knots.ndim != 1 or knots.size < 2:
            raise EnvError("need at least two knot values")
        if not np.all(np.isfinite(knots)):
            raise EnvError("knot values must be finite")
        if knots.min() < self.spec.ei or knots.max() > self.spec.es:
            raise EnvError("knot values outside [ei, es]")
        last = self.knot_origin + (knots.size - 1) * self.spec.dx
        if self.x_lo < self.knot_origin - 1e-12 or self.x_hi > last + 1e-12:
            raise EnvError("domain not covered by the knots")
        if not (0.0 <= self.phase < 1.0):
            raise EnvError("phase must lie in [0, 1)")

    @property
    def ei(self) -> float:
        return self.spec.ei

    @property
    def es(self) -> float:
        return self.spec.es

    @property
    def dx(self) -> float:
        return self.spec.dx

    @property
    def domain(self) -> tuple[float, float]:
        return (self.x_lo, self.x_hi)

    @property
    def knot_positions(self) -> np.ndarray:
        return self.knot_origin + self.spec.dx * np.arange(self.knots.size)

    def table(self) -> tuple[float, float, np.ndarray]:
        """(origin, spacing, values) triple consumed by the compiled kernels."""
        return float(self.knot_origin), float(self.spec.dx), self.knots

    def __call__(self, x):
        return eval_potential(self, x)

    def __eq__(self, other):
        if not isinstance(other, Environment):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.knot_origin == other.knot_origin
            and self.phase == other.phase
            and self.x_lo == other.x_lo
            and self.x_hi == other.x_hi
            and self.seed == other.seed
            and np.array_equal(self.knots, other.knots)
        )

    __hash__ = None


@dataclass(frozen=True)
class LatticeEnvironment:
    """Site branching rates ``rates[i]`` at integer site ``site_lo + i``."""

    rates: np.ndarray
    site_lo: int
    ei: float
    es: float
    kappa: float = 1.0
    seed: int = 0
    spec: EnvSpec | None = field(default=None, compare=False)

    def __post_init__(self):
        rates = np.array(self.rates, dtype=np.float64)
        rates.setflags(write=False)
        object.__setattr__(self, "rates", rates)
        if not (self.ei > 0):
            raise EnvError("lattice rates need ei > 0")
        if self.es < self.ei:
            raise EnvError("es must be >= ei")
        if not (self.kappa > 0):
            raise EnvError("kappa must be > 0")
        if rates.ndim != 1 or rates.size == 0:
            raise EnvError("need at least one site")
        if rates.min() < self.ei or rates.max() > self.es:
            raise EnvError("site rates outside [ei, es]")

    @property
    def site_hi(self) -> int:
        return self.site_lo + self.rates.size - 1

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.site_lo, self.site_hi + 1)

    def rate(self, x):
        x = np.asarray(x)
        idx = x - self.site_lo
        if np.any(idx < 0) or np.any(idx >= self.rates.size):
            raise EnvError("site outside the lattice window")
        return self.rates[idx]

    def __eq__(self, other):
        if not isinstance(other, LatticeEnvironment):
            return NotImplemented
        return (
            self.site_lo == other.site_lo
            and self.ei == other.ei
            and self.es == other.es
            and self.kappa == other.kappa
            and self.seed == other.seed
            and np.array_equal(self.rates, other.rates)
        )

    __hash__ = None


def _rng(spec: EnvSpec, seed) -> np.random.Generator:
    seed = spec.seed if seed is None else seed
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), KINDS.index(spec.kind)]))


def _knot_frame(spec: EnvSpec, phase: float) -> tuple[float, int]:
    """Origin of the first knot at or left of x_lo on the lattice (j + phase) dx."""
    k0 = math.floor(spec.x_lo / spec.dx - phase)
    origin = (k0 + phase) * spec.dx
    n = math.ceil((spec.x_hi - origin) / spec.dx) + 1
    return origin, max(n, 2)


def _block_knots(spec: EnvSpec, rng: np.random.Generator, origin: float, n: int) -> np.ndarray:
    dx = spec.dx
    ramp_cells = max(1, round(spec.ramp / dx))
    # Breakpoints in grid-cell units so that the knot interpolant reproduces
    # the block profile exactly.
    p_low = dx / spec.mean_low
    p_high = dx / spec.mean_high
    high = rng.random() < spec.mean_high / (spec.mean_high + spec.mean_low)
    first = int(rng.geometric(p_high if high else p_low))
    cell = -int(rng.integers(0, first + 1))
    xs, vs = [], []
    level = spec.es if high else spec.ei
    length = first
    while True:
        xs.extend([cell, cell + length])
        vs.extend([level, level])
        cell += length + ramp_cells
        if cell - ramp_cells > n:
            break
        high = not high
        level = spec.es if high else spec.ei
        length = int(rng.geometric(p_high if high else p_low))
    values = np.interp(np.arange(n), np.array(xs, dtype=float), np.array(vs))
    return np.clip(values, spec.ei, spec.es)


def sample_environment(spec: EnvSpec, seed: int | None = None):
    """Deterministic environment draw for ``(spec, seed)``.

    ``seed`` defaults to ``spec.seed``.  Returns a :class:`LatticeEnvironment`
    for ``kind="lattice-iid"`` and an :class:`Environment` otherwise.
    """
    validate_spec(spec)
    seed = spec.seed if seed is None else int(seed)
    rng = _rng(spec, seed)
    if spec.kind == "lattice-iid":
        site_lo = math.floor(spec.x_lo)
        site_hi = math.ceil(spec.x_hi)
        n = site_hi - site_lo + 1
        b = int(spec.block)
        # runs of b equal rates with a uniform offset, i.i.d. across runs
        offset = int(rng.integers(0, b))
        nrun = (n + offset) // b + 1
        if spec.marginal == "uniform":
            levels = rng.uniform(spec.ei, spec.es, size=nrun)
        else:
            levels = np.where(rng.random(nrun) < spec.p_high, spec.es, spec.ei)
        rates = np.repeat(levels, b)[offset:offset + n]
        return LatticeEnvironment(rates, site_lo, spec.ei, spec.es, spec.kappa, seed, spec)

    if spec.kind == "constant":
        phase = 0.0
        origin, n = _knot_frame(spec, phase)
        knots = np.full(n, spec.es)
    else:
        phase = float(rng.random())
        origin, n = _knot_frame(spec, phase)
        if spec.kind == "interpolated-iid":
            if spec.marginal == "uniform":
                knots = rng.uniform(spec.ei, spec.es, size=n)
            else:
                knots = np.where(rng.random(n) < spec.p_high, spec.es, spec.ei)
        else:
            knots = _block_knots(spec, rng, origin, n)
    return Environment(spec, knots, origin, phase, spec.x_lo, spec.x_hi, seed)


def constant_environment(value: float, x_lo: float = -100.0, x_hi: float = 100.0, dx: float = 1.0):
    """Environment with xi identically ``value`` on ``[x_lo, x_hi]``."""
    return sample_environment(EnvSpec("constant", value, value, dx, x_lo, x_hi))


def eval_potential(env: Environment, x):
    """Potential at ``x`` (scalar or array); out-of-domain points raise."""
    xa = np.asarray(x, dtype=np.float64)
    if np.any(~np.isfinite(xa)) or np.any(xa < env.x_lo) or np.any(xa > env.x_hi):
        raise EnvError(f"evaluation point outside domain [{env.x_lo}, {env.x_hi}]")
    out = np.interp(xa, env.knot_positions, env.knots)
    return float(out) if out.ndim == 0 else out


def zeta(env: Environment, x):
    """Shifted potential xi - es, valued in [ei - es, 0]."""
    v = eval_potential(env, x)
    return v - env.es


def max_slope(env: Environment) -> float:
    return float(np.max(np.abs(np.diff(env.knots))) / env.dx)


def expected_block_fraction(spec: EnvSpec, threshold: float) -> float:
    """Long-run fraction of space where a two-valued-blocks potential exceeds ``threshold``.

    Renewal-reward over one high plateau, one low plateau and two ramps.
    """
    if spec.kind != "two-valued-blocks":
        raise EnvError("block fraction only defined for two-valued-blocks")
    if not (spec.ei < threshold < spec.es):
        raise EnvError("threshold must lie strictly between ei and es")
    ramp = max(1, round(spec.ramp / spec.dx)) * spec.dx
    above = spec.mean_high + 2 * ramp * (spec.es - threshold) / (spec.es - spec.ei)
    return above / (spec.mean_high + spec.mean_low + 2 * ramp)


# --------------------------------------------------------------------------
# persistence

def _spec_dict(spec: EnvSpec) -> dict:
    return asdict(spec)


def save_environment(env, path) -> None:
    path = Path(path)
    if isinstance(env, LatticeEnvironment):
        record = {
            "version": FILE_VERSION,
            "kind": "lattice-iid",
            "ei": env.ei,
            "es": env.es,
            "kappa": env.kappa,
            "seed": env.seed,
            "site_lo": env.site_lo,
            "rates": env.rates.tolist(),
        }
    else:
        record = {
            "version": FILE_VERSION,
            "kind": env.spec.kind,
            "ei": env.ei,
            "es": env.es,
            "dx": env.dx,
            "phase": env.phase,
            "seed": env.seed,
            "x_lo": env.x_lo,
            "x_hi": env.x_hi,
            "knot_origin": env.knot_origin,
            "spec": _spec_dict(env.spec),
            "knots": env.knots.tolist(),
        }
    # json writes floats with repr(), which round-trips exactly.
    path.write_text(json.dumps(record, indent=1))


def load_environment(path):
    try:
        record = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise EnvError(f"malformed environment file {path}: {exc}") from None
    if not isinstance(record, dict) or "version" not in record:
        raise EnvError(f"malformed environment file {path}: missing header")
    if record["version"] != FILE_VERSION:
        raise EnvError(f"unsupported environment file version {record['version']}")
    try:
        if record["kind"] == "lattice-iid":
            return LatticeEnvironment(
                np.array(record["rates"], dtype=np.float64),
                int(record["site_lo"]),
                float(record["ei"]),
                float(record["es"]),
                float(record["kappa"]),
                int(record["seed"]),
            )
        spec = EnvSpec(**record["spec"])
        if spec.ei != record["ei"] or spec.es != record["es"] or spec.kind != record["kind"]:
            raise EnvError("header fields disagree with the stored spec")
        return Environment(
            spec,
            np.array(record["knots"], dtype=np.float64),
            float(record["knot_origin"]),
            float(record["phase"]),
            float(record["x_lo"]),
            float(record["x_hi"]),
            int(record["seed"]),
        )
    except (KeyError, TypeError) as exc:
        raise EnvError(f"malformed environment file {path}: {exc}") from None
