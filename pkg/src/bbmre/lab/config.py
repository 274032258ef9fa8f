"""Flat ``key = value`` experiment configuration.

Lines are ``key = value``; ``#`` starts a comment.  Keys prefixed ``env.``
describe the environment (any :class:`~bbmre.env.EnvSpec` field, or
``env.file`` pointing at a saved environment).  ``experiment``, ``seed`` and
``out`` are reserved; everything else is an experiment parameter.  Missing
parameters take the documented defaults of the experiment.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..env import EnvSpec, EnvError, load_environment, sample_environment

EXPERIMENTS = ("duality", "homogeneous-speed", "figure1", "front-contrast", "sturmian-suite",
               "perturbation-check", "tilt-suite")


class ConfigError(ValueError):
    pass


# default environments and parameters per experiment; values are (default, lo, hi)
# with lo/hi the documented admissible range (None = unbounded)
DEFAULT_ENV = {
    "duality": dict(kind="constant", ei=1.0, es=1.0, x_lo=-60.0, x_hi=60.0),
    "homogeneous-speed": dict(kind="constant", ei=1.0, es=1.0, x_lo=-200.0, x_hi=200.0),
    "figure1": dict(kind="lattice-iid", ei=0.2, es=2.0, x_lo=-1200.0, x_hi=1200.0, block=10, kappa=1.0),
    # block means fixed by a design pilot on seeds disjoint from the default env_seeds
    "front-contrast": dict(kind="two-valued-blocks", ei=0.4, es=1.0, dx=1.0, x_lo=-3000.0, x_hi=5000.0,
                           mean_low=100.0, mean_high=200.0, ramp=1.0),
    "sturmian-suite": dict(kind="interpolated-iid", ei=0.5, es=1.5, x_lo=-200.0, x_hi=200.0),
    "perturbation-check": dict(kind="interpolated-iid", ei=0.5, es=1.0, x_lo=-100.0, x_hi=300.0),
    "tilt-suite": dict(kind="interpolated-iid", ei=0.5, es=1.0, x_lo=-50.0, x_hi=150.0),
}

PARAMS = {
    "duality": {
        "t": (4.0, 0.0, 50.0), "y": (2.0, None, None), "x0": (0.0, None, None),
        "n_trees": (20000, 100, 10**7), "dx": (0.05, 1e-3, 1.0),
    },
    "homogeneous-speed": {
        "t_lo": (20.0, 1.0, None), "t_hi": (40.0, 1.0, None), "dx": (0.1, 1e-3, 1.0), "tol": (0.05, 0.0, 1.0),
    },
    "figure1": {
        "t_end": (400.0, 1.0, 2000.0), "dt": (0.05, 1e-4, 0.5), "env_seeds": ((1, 2), None, None),
        "y_step": (1, 1, 10), "stationary_from": (0.25, 0.0, 0.9), "t_step": (0.5, 0.01, None),
        "ratio_min": (1.2, 1.0, None), "mc_reps": (0, 0, 10**6), "mc_t": (10.0, 0.0, None),
    },
    "front-contrast": {
        "t_end": (400.0, 10.0, 5000.0), "eps": (0.01, 1e-6, 0.4999), "dx": (0.5, 1e-3, 2.0),
        "dt": (0.05, 1e-4, 1.0), "y_step": (2.0, 0.1, 10.0), "t_step": (5.0, 0.5, None),
        "burn_in": (10.0, 0.0, None), "min_increment": (1.0, 0.0, None), "env_seeds": ((1,), None, None),
        "min_records": (5, 1, None), "spread_fraction": (1 / 3, 0.0, 1.0),
    },
    "sturmian-suite": {
        "n_env": (20, 1, 1000), "n_slices": (50, 2, 10**4), "y1": (0.0, None, None), "y2": (3.0, None, None),
        "shift": (2.0, 0.0, None), "t_end": (10.0, 0.1, None), "dx": (0.1, 1e-3, 1.0),
    },
    "perturbation-check": {
        "n_env": (5, 1, 100), "x": (0.0, None, None), "y": (30.0, None, None), "t": (20.0, 0.1, None),
        "h_max": (3.0, 0.0, None), "n_h": (7, 3, 100), "n": (4000, 100, 10**7), "dt": (0.01, 1e-5, 0.1),
        "n_boot": (400, 50, 10**5), "min_ess": (200.0, 1.0, None),
    },
    "tilt-suite": {
        "n_env": (10, 1, 100), "n_mc": (5000, 100, 10**7), "eta": (-1.0, None, 0.0), "d": (10.0, 0.1, None),
    },
}

RESERVED = ("experiment", "seed", "out")


def _parse_value(text: str):
    text = text.strip()
    if "," in text:
        return tuple(_parse_value(p) for p in text.split(",") if p.strip())
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def _canon(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_canon(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {n}: empty key")
        if key in out:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        out[key] = _parse_value(value)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seed: int = 0
    out_dir: str = "."
    env: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        validate(self)

    @classmethod
    def from_dict(cls, d: dict):
        d = dict(d)
        if "experiment" not in d:
            raise ConfigError("missing 'experiment' key")
        name = str(d.pop("experiment"))
        seed = d.pop("seed", 0)
        out = str(d.pop("out", "."))
        env = {k[4:]: v for k, v in d.items() if k.startswith("env.")}
        params = {k: v for k, v in d.items() if not k.startswith("env.")}
        return cls(name, int(seed), out, env, params)

    @classmethod
    def from_text(cls, text: str):
        return cls.from_dict(parse_config_text(text))

    @classmethod
    def from_file(cls, path):
        return cls.from_text(Path(path).read_text())

    def resolved(self) -> dict:
        """Parameters with defaults filled in."""
        out = {k: v[0] for k, v in PARAMS[self.name].items()}
        out.update(self.params)
        for k, v in out.items():
            if k == "env_seeds" and not isinstance(v, tuple):
                out[k] = (v,)
        return out

    def env_fields(self) -> dict:
        if "file" in self.env:
            return {}
        d = dict(DEFAULT_ENV[self.name])
        d.update(self.env)
        return d

    def environment(self, seed: int | None = None):
        if "file" in self.env:
            return load_environment(self.env["file"])
        d = self.env_fields()
        try:
            spec = EnvSpec(**d)
        except TypeError as exc:
            raise ConfigError(f"bad environment key: {exc}") from None
        return sample_environment(spec, seed)

    def canonical_text(self) -> str:
        items = {"experiment": self.name, "seed": self.seed}
        for k, v in self.env_fields().items():
            items["env." + k] = v
        if "file" in self.env:
            items["env.file"] = self.env["file"]
            # results depend on the file contents, not on its name
            items["env.file_sha256"] = hashlib.sha256(Path(self.env["file"]).read_bytes()).hexdigest()
        items.update(self.resolved())
        return "".join(f"{k} = {_canon(items[k])}\n" for k in sorted(items))

    @property
    def hash(self) -> str:
        # the output directory does not change results, so it is left out
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]


def validate(cfg: ExperimentConfig) -> None:
    if cfg.name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.name!r}; choose from {', '.join(EXPERIMENTS)}")
    spec = PARAMS[cfg.name]
    for k, v in cfg.params.items():
        if k not in spec:
            raise ConfigError(f"unknown parameter {k!r} for {cfg.name}")
        default, lo, hi = spec[k]
        if isinstance(default, tuple):
            continue
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigError(f"{k} must be numeric, got {v!r}")
        if not math.isfinite(v) or (lo is not None and v < lo) or (hi is not None and v > hi):
            raise ConfigError(f"{k}={v} outside [{lo}, {hi}]")
    if "file" in cfg.env:
        if not Path(cfg.env["file"]).exists():
            raise ConfigError(f"environment file {cfg.env['file']} does not exist")
        return
    known = {f.name for f in fields(EnvSpec)}
    bad = set(cfg.env) - known
    if bad:
        raise ConfigError(f"unknown environment keys {sorted(bad)}")
    try:
        EnvSpec(**cfg.env_fields())
    except EnvError as exc:
        raise ConfigError(str(exc)) from None
