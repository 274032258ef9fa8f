import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bbmre import tilt
from bbmre.env import EnvSpec, constant_environment
from bbmre.tilt import TiltError


@pytest.fixture(scope="module")
def zero_potential():
    # xi == es, so the centred potential vanishes
    return constant_environment(1.0, -100.0, 100.0)


def test_constant_drift_in_zero_potential(zero_potential):
    tm = tilt.solve_b(zero_potential, -0.5, (0.0, 10.0))
    assert np.allclose(tm.b[tm.retained], 1.0, atol=1e-10)
    assert tilt.log_Z(tm, 0.0, 1.0) == pytest.approx(-1.0, abs=1e-9)
    assert tilt.expected_hitting_time(tm, 0.0, 5.0) == pytest.approx(5.0, abs=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.floats(-4.0, -0.05))
def test_drift_equals_root_of_twice_abs_tilt(eta):
    env = constant_environment(1.0, -200.0, 100.0)
    tm = tilt.solve_b(env, eta, (0.0, 5.0))
    assert np.allclose(tm.b[tm.retained], math.sqrt(-2 * eta), rtol=1e-8)


def test_bounds_and_residual(rough):
    tm = tilt.solve_b(rough, -2.0, (-20.0, 20.0))
    lo, hi = tilt.drift_bounds(-2.0, rough.ei, rough.es)
    assert (lo, hi) == pytest.approx((2.0, math.sqrt(6.0)))
    kept = tm.b[tm.retained]
    assert kept.min() >= lo - tilt.BOUND_TOL and kept.max() <= hi + tilt.BOUND_TOL
    assert tilt.riccati_residual(tm).max() < 1e-3


def test_invalid_tilt(rough):
    with pytest.raises(TiltError):
        tilt.solve_b(rough, 0.5, (0.0, 1.0))
    with pytest.raises(TiltError):
        tilt.solve_b(rough, -1.0, (1.0, 1.0))
    tm = tilt.solve_b(rough, -1.0, (0.0, 5.0))
    with pytest.raises(TiltError):
        tm.ln_z_at(6.0)


def test_calibration_in_zero_potential(zero_potential):
    for v, eta in ((2.0, -2.0), (1.0, -0.5)):
        cal = tilt.calibrate_eta(zero_potential, 0.0, 10.0, v)
        assert cal.found and cal.eta == pytest.approx(eta, rel=1e-6)
        assert cal.residual < 1e-8


def test_calibration_hits_target(rough):
    cal = tilt.calibrate_eta(rough, -10.0, 10.0, 1.5)
    assert cal.found
    assert tilt.expected_hitting_time(cal.tm, -10.0, 10.0) == pytest.approx(20.0 / 1.5, rel=1e-8)


def test_simulated_hitting_moments(zero_potential):
    # drift one: inverse Gaussian with mean 5 and variance 5
    tm = tilt.solve_b(zero_potential, -0.5, (0.0, 10.0))
    s = tilt.simulate_tilted(tm, 0.0, 5.0, 4000, seed=1, dt=1e-3)
    H = s.H
    assert not s.censored.any()
    assert abs(H.mean() - 5.0) <= 3 * math.sqrt(5.0 / H.size) + 0.01
    assert H.var(ddof=1) == pytest.approx(5.0, rel=0.1)


def test_simulated_mean_matches_ode(rough):
    tm = tilt.solve_b(rough, -1.0, (-10.0, 10.0))
    s = tilt.simulate_tilted(tm, -5.0, 5.0, 3000, seed=2)
    se = s.H.std(ddof=1) / math.sqrt(s.H.size)
    assert abs(s.H.mean() - tilt.expected_hitting_time(tm, -5.0, 5.0)) <= 3 * se + 0.01


def test_simulation_reproducible(rough):
    tm = tilt.solve_b(rough, -1.0, (-10.0, 10.0))
    a = tilt.simulate_tilted(tm, -5.0, 0.0, 50, seed=7)
    b = tilt.simulate_tilted(tm, -5.0, 0.0, 50, seed=7)
    assert np.array_equal(a.H, b.H)
    with pytest.raises(TiltError):
        tilt.simulate_tilted(tm, 1.0, 0.0)


def test_girsanov_crosscheck(rough):
    rep = tilt.girsanov_crosscheck(rough, -1.0, 0.0, 2.0, n=2000, seed=3)
    assert rep.ks_ok and rep.weight_ok


def test_dominance(rough):
    tm = tilt.solve_b(rough, -1.0, (-60.0, 60.0))
    r0 = tilt.dominance_check(tm, 0.0, 0.0, n=100)
    assert r0.ok and np.all(r0.samples == 0.0)
    r = tilt.dominance_check(tm, -40.0, 10.0, n=2000, seed=4)
    assert r.ok


def test_annealed_quantities_zero_potential():
    spec = EnvSpec("constant", 1.0, 1.0)
    assert tilt.annealed_lmgf(spec, -2.0, n_cells=50) == pytest.approx(-2.0, abs=1e-8)
    assert tilt.eta_bar(spec, 1.5, n_cells=50) == pytest.approx(-1.125, rel=1e-5)
    v1, v2 = tilt.v1_v2(spec, n_cells=50)
    assert v1 == pytest.approx(2.0)
    assert v2 == pytest.approx(math.sqrt(20.0), rel=1e-5)


def test_barrier_parameters():
    tilt.check_barrier_params(3.0, 1.0)
    for K, L in ((1.0, 1.0), (2.0, 1.0), (1.0, 0.0)):
        with pytest.raises(ValueError):
            tilt.check_barrier_params(K, L)


def test_barrier_events_consistent(rough):
    s = tilt.barrier_event_stats(rough, -1.0, 20.0, 10.0, 1.5, 3.0, 1.0, n=2000, seed=5)
    assert s.early.value + s.last_window.value == pytest.approx(s.hit_by_t.value)
    assert s.good.value + s.barrier_early.value <= s.hit_by_t.value + 1e-12


def test_ks_constant_calibration():
    c = tilt.calibrate_ks_constant(-1.0, 3.0, 1000, 30.0, reps=100, seed=1)
    assert c == tilt.calibrate_ks_constant(-1.0, 3.0, 1000, 30.0, reps=100, seed=1)
    # the 1% critical value of an unweighted KS statistic is about 1.63
    assert 1.2 < c[0] < 2.5 and 1.2 < c[1] < 2.5


def test_zero_potential_null_check():
    r = tilt.girsanov_null(-1.0, 2.0, n=1000, seed=2)
    assert r.ok
    assert r.ks_tilted < r.threshold_tilted
