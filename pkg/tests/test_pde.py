import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from bbmre import pde
from bbmre.branching import OffspringDistribution, exceedance, sample_lattice_maxima
from bbmre.env import EnvSpec, constant_environment, sample_environment
from bbmre.pde import GridFunction, PDEError


def test_nonlinearity_values(binary):
    assert pde.nonlinearity_F(binary, 0.5) == pytest.approx(0.25)
    d = OffspringDistribution.from_dict({1: 0.5, 3: 0.5})
    assert pde.nonlinearity_F(d, 0.5) == pytest.approx(0.1875)
    assert pde.nonlinearity_F(d, [0.0, 1.0]) == pytest.approx([0.0, 0.0])
    with pytest.raises(ValueError):
        pde.nonlinearity_F(binary, 1.5)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=5), st.floats(0.0, 1.0))
def test_nonlinearity_kpp_bounds(raw, w):
    p = np.array(raw) / sum(raw)
    try:
        d = OffspringDistribution(tuple(p))
    except ValueError:
        return
    f = pde.nonlinearity_F(d, w)
    assert -1e-15 <= f <= (d.mu - 1) * w + 1e-12


def test_dt_guard():
    pde.check_dt(0.01, 0.1, "theta")
    with pytest.raises(PDEError):
        pde.check_dt(0.02, 0.1, "theta")
    with pytest.raises(PDEError):
        pde.check_dt(0.0046, 0.1, "explicit")
    with pytest.raises(ValueError):
        pde.check_dt(0.01, 0.1, "leapfrog")


def test_time_zero_returns_datum(flat, binary):
    x = np.arange(-5, 5.001, 0.1)
    init = GridFunction(-5.0, 0.1, np.clip(0.5 - x / 4, 0, 1))
    sol = pde.solve_fkpp(flat, binary, pde.FkppRun(init=init, t_end=0.0, snapshots=(0.0,)))
    assert np.array_equal(sol.snapshots[0].values, init.values)


def test_pam_constant_growth(flat):
    init = GridFunction(-10.0, 0.1, np.ones(201))
    u = pde.solve_pam(flat, init, 2.0)
    assert np.allclose(u.values, math.exp(2.0), rtol=1e-4)
    zero = pde.solve_pam(flat, GridFunction(-10.0, 0.1, np.zeros(201)), 2.0)
    assert np.all(zero.values == 0)


def test_pam_heat_kernel(flat):
    # u(1, 0) = e * P(B_1 >= 1) for the half-Laplacian
    x = np.arange(-30, 30.001, 0.05)
    init = GridFunction(x[0], 0.05, pde.heaviside(x, 1.0, 0.05))
    u = pde.solve_pam(flat, init, 1.0)
    assert u(0.0) == pytest.approx(math.e * norm.sf(1.0), rel=1e-3)


def test_front_moves_to_the_right(flat, binary):
    pos = pde.front_positions(flat, binary, [5.0, 10.0], dx=0.1)
    speed = (pos[1] - pos[0]) / 5.0
    assert 1.0 < speed < math.sqrt(2)


def test_comparison_principle(rough, binary):
    x, ev = pde.solve_fkpp_rows(rough, binary, [-1.0, 0.5, 2.0, 4.0], 6.0, dx=0.1, times=(2.0, 6.0))
    for snap in ev.snapshots:
        assert np.all(np.diff(snap, axis=0) <= 1e-12)
        assert np.all((snap >= 0) & (snap <= 1))


def test_probe_only_matches_full_solve(rough, binary):
    ys = np.arange(-3.0, 30.0, 1.0)
    _, full = pde.solve_fkpp_rows(rough, binary, ys, 15.0, dx=0.1)
    _, fast = pde.solve_fkpp_rows(rough, binary, ys, 15.0, dx=0.1, probe_only=True)
    assert np.max(np.abs(full.trace - fast.trace)) < 1e-8


def test_lattice_trace_against_simulation(binary):
    lat = sample_environment(EnvSpec("lattice-iid", 0.5, 1.5, x_lo=-150, x_hi=150), 4)
    sol = pde.solve_lattice_fkpp(lat, binary, 2, 2.0)
    p, se = exceedance(sample_lattice_maxima(lat, binary, 0, 2.0, 8000, seed=3), 2.0)
    assert abs(sol.trace[0, -1] - p) <= 3 * se


def test_quantile_table_monotone(rough, binary):
    qt = pde.quantile_table(rough, binary, np.arange(-5.0, 25.0, 0.1), np.array([2.0, 5.0, 10.0]))
    assert np.all(np.diff(qt.P, axis=1) <= 1e-12)      # decreasing in y
    assert np.all(np.diff(qt.median()) > 0)
    assert np.all(qt.spread() > 0)
    assert np.all(qt.quantile(0.1) <= qt.quantile(0.9))
    with pytest.raises(ValueError):
        qt.quantile(1.0)


def test_temporal_quantile_monotone(rough, binary):
    taus = pde.temporal_quantile(rough, binary, np.array([2.0, 4.0, 8.0]), 0.5)
    assert np.all(np.diff(taus) > 0)
    assert pde.temporal_quantile(rough, binary, 4.0, 0.1) < taus[1]


def test_zero_crossings():
    x = np.arange(0.05, 9.4, 0.01)
    n, loc = pde.zero_crossings(GridFunction(x[0], 0.01, np.sin(x)))
    assert n == 2 and loc == pytest.approx([math.pi, 2 * math.pi], abs=1e-4)
    wiggle = GridFunction(0.0, 1.0, [1.0, 1e-9, -1e-9, 1e-9, -1.0])
    assert pde.zero_crossings(wiggle)[0] == 3
    assert pde.zero_crossings(wiggle, deadband=1e-6)[0] == 1
    assert pde.zero_crossings(GridFunction(0.0, 1.0, np.zeros(5)))[0] == 0


def test_front_width_examples():
    x = np.arange(-2, 3.001, 0.01)
    step = GridFunction(x[0], 0.01, (x <= 0).astype(float))
    assert pde.front_width(step, 0.1) == 0.0
    ramp = GridFunction(x[0], 0.01, np.clip(1 - x, 0, 1))
    assert pde.front_width(ramp, 0.25) == pytest.approx(0.5, abs=0.011)
    with pytest.raises(ValueError):
        pde.front_width(ramp, 0.5)


def test_front_width_in_constant_potential_is_stable(binary):
    w = pde.front_widths(constant_environment(1.0, -200.0, 200.0), binary, [10.0, 15.0], eps=0.1)
    assert abs(w[1] - w[0]) < 0.3


def test_sturmian_at_time_zero(rough, binary):
    # 1_[0,inf) - 1_[1,inf) is non-negative: no sign change
    r = pde.sturmian_check(rough, binary, 0.0, 1.0, 0.0, [0.0], deadband=1e-9)
    assert r.counts.tolist() == [0] and r.ok
    r = pde.sturmian_check(rough, binary, 1.0, 1.0, 0.5, [0.0], deadband=1e-9)
    assert r.counts.tolist() == [1]
    with pytest.raises(ValueError):
        pde.sturmian_check(rough, binary, 1.0, 0.0, 1.0, [0.0])


def test_sturmian_small_run(rough, binary):
    r = pde.sturmian_check(rough, binary, 0.0, 3.0, 1.0, [0.0, 1.0, 2.0, 4.0])
    assert r.ok


def test_lyapunov_constant_potential():
    env = constant_environment(1.0, -200.0, 200.0)
    est = pde.lyapunov_estimate(env, 1.0, 10.0)
    assert est.value == pytest.approx(0.5, abs=5e-3)
    assert est.at_t < est.at_2t < 0.5
    with pytest.raises(ValueError):
        pde.lyapunov_estimate(env, -1.0, 10.0)


def test_speed_constant_potential():
    env = constant_environment(1.0, -200.0, 200.0)
    assert pde.v0_estimate(env, 8.0, tol=1e-3) == pytest.approx(math.sqrt(2), abs=1e-2)


def test_wave_profiles_constant_potential(binary):
    r = pde.wave_profile_convergence(constant_environment(1.0, -200.0, 200.0), binary, [4.0, 8.0], 0.5, dx=0.1, tol=1e-6)
    assert r.D[0, 1] < 0.05
    assert r.monotone_ok
