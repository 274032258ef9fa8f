import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bbmre.env import (EnvError, EnvSpec, Environment, LatticeEnvironment, constant_environment,
                       eval_potential, expected_block_fraction, load_environment, max_slope, sample_environment,
                       save_environment, zeta)


def test_constant_kind_is_es_everywhere():
    env = sample_environment(EnvSpec("constant", 1.0, 1.0), 7)
    x = np.linspace(-100, 100, 1001)
    assert np.all(env(x) == 1.0)
    assert eval_potential(env, 3.2) == 1.0


def test_uniform_knots_stay_in_support_and_slope_bounded():
    env = sample_environment(EnvSpec("interpolated-iid", 0.5, 1.5, dx=1.0), 1)
    assert env.knots.min() >= 0.5 and env.knots.max() <= 1.5
    assert max_slope(env) <= 1.0


def test_block_occupation_matches_renewal_fraction():
    spec = EnvSpec("two-valued-blocks", 0.4, 1.0, dx=1.0, x_lo=0.0, x_hi=1e4, mean_low=20.0, mean_high=20.0)
    expected = expected_block_fraction(spec, 0.9)
    # average over independent draws so the standard error is honest
    fr = []
    for s in range(20):
        env = sample_environment(spec, s)
        x = np.arange(0.5, 1e4, 1.0)
        fr.append(np.mean(env(x) > 0.9))
    fr = np.array(fr)
    se = fr.std(ddof=1) / math.sqrt(fr.size)
    assert abs(fr.mean() - expected) <= 3 * se + 1e-3


def test_block_fraction_formula_by_hand():
    # plateaus 20 + 20, two ramps of width 1 with a quarter of each above 0.85
    spec = EnvSpec("two-valued-blocks", 0.4, 1.0, mean_low=20.0, mean_high=20.0, ramp=1.0)
    assert expected_block_fraction(spec, 0.85) == pytest.approx((20 + 2 * 0.25) / 42)


def test_linear_interpolation_between_knots():
    spec = EnvSpec("interpolated-iid", 0.5, 1.0, dx=1.0, x_lo=0.0, x_hi=1.0)
    env = Environment(spec, np.array([0.6, 1.0]), 0.0, 0.0, 0.0, 1.0)
    assert eval_potential(env, 0.25) == pytest.approx(0.7)
    assert zeta(env, 0.25) == pytest.approx(-0.3)


def test_out_of_domain_raises(rough):
    with pytest.raises(EnvError):
        eval_potential(rough, 1e6)
    with pytest.raises(EnvError):
        eval_potential(rough, np.nan)


@pytest.mark.parametrize("kw", [dict(dx=0.0), dict(ei=0.0), dict(ei=2.0, es=1.0), dict(kind="nope"),
                                dict(block=0), dict(x_lo=5.0, x_hi=5.0)])
def test_invalid_specs_rejected(kw):
    base = dict(kind="interpolated-iid", ei=0.5, es=1.5)
    base.update(kw)
    with pytest.raises(EnvError):
        EnvSpec(**base)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), ei=st.floats(0.05, 2.0), gap=st.floats(0.0, 3.0),
       kind=st.sampled_from(["interpolated-iid", "two-valued-blocks", "constant"]))
def test_values_in_range_everywhere(seed, ei, gap, kind):
    es = ei + gap if kind != "constant" else ei
    env = sample_environment(EnvSpec(kind, ei, es, dx=0.5, x_lo=-30.0, x_hi=30.0, mean_low=2.0, mean_high=3.0), seed)
    x = np.random.default_rng(seed).uniform(-30, 30, 2000)
    v = env(x)
    assert np.all(v >= ei) and np.all(v <= es)
    z = zeta(env, x)
    assert np.all(z <= 0) and np.all(z >= ei - es - 1e-15)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_sampling_is_deterministic(seed):
    spec = EnvSpec("interpolated-iid", 0.5, 1.5, x_lo=-20.0, x_hi=20.0)
    assert sample_environment(spec, seed) == sample_environment(spec, seed)


def test_different_seeds_differ():
    spec = EnvSpec("interpolated-iid", 0.5, 1.5)
    assert sample_environment(spec, 1) != sample_environment(spec, 2)


def test_lattice_blocks_are_runs_of_equal_rates():
    spec = EnvSpec("lattice-iid", 0.2, 2.0, x_lo=-50, x_hi=50, block=10)
    env = sample_environment(spec, 4)
    assert isinstance(env, LatticeEnvironment)
    assert env.sites[0] == -50 and env.site_hi == 50
    changes = np.flatnonzero(np.diff(env.rates) != 0) + 1
    assert np.all(np.diff(changes) == 10)


def test_lattice_rate_outside_window_raises():
    env = sample_environment(EnvSpec("lattice-iid", 0.5, 1.0, x_lo=-5, x_hi=5), 0)
    with pytest.raises(EnvError):
        env.rate(6)


@pytest.mark.parametrize("kind", ["interpolated-iid", "two-valued-blocks", "lattice-iid"])
def test_save_load_round_trip(tmp_path, kind):
    env = sample_environment(EnvSpec(kind, 0.3, 1.7, dx=0.7, x_lo=-11.0, x_hi=13.0), 5)
    p = tmp_path / "env.json"
    save_environment(env, p)
    assert load_environment(p) == env


def test_corrupted_header_rejected(tmp_path):
    p = tmp_path / "env.json"
    p.write_text("{not json")
    with pytest.raises(EnvError):
        load_environment(p)
    p.write_text(json.dumps({"kind": "constant"}))
    with pytest.raises(EnvError):
        load_environment(p)


def test_file_with_es_below_ei_rejected(tmp_path):
    env = sample_environment(EnvSpec("interpolated-iid", 0.5, 1.5, x_lo=-5.0, x_hi=5.0), 1)
    p = tmp_path / "env.json"
    save_environment(env, p)
    rec = json.loads(p.read_text())
    rec["spec"]["es"] = 0.1
    rec["es"] = 0.1
    p.write_text(json.dumps(rec))
    with pytest.raises(EnvError):
        load_environment(p)


def test_environment_is_immutable(flat):
    with pytest.raises(ValueError):
        flat.knots[0] = 3.0
    assert constant_environment(2.0).es == 2.0
