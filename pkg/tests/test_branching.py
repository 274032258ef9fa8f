import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from bbmre import pde
from bbmre.branching import (BranchingError, OffspringDistribution, exceedance, max_quantiles_mc,
                             normalize_offspring, quantiles_from_samples, sample_lattice_maxima,
                             sample_lineage_gaps, sample_maxima, simulate_lattice_tree, simulate_tree)
from bbmre.env import EnvError, EnvSpec, LatticeEnvironment, constant_environment, sample_environment


def test_offspring_validation():
    with pytest.raises(ValueError):
        OffspringDistribution((1.0,))          # mean 1, no growth
    with pytest.raises(ValueError):
        OffspringDistribution((0.5, 0.4))      # does not sum to one
    with pytest.raises(ValueError):
        OffspringDistribution.from_dict({0: 0.5, 2: 0.5})
    d = OffspringDistribution.from_dict({1: 0.5, 3: 0.5})
    assert d.mu == 2.0 and d.mu2 == 5.0


def test_normalisation_identity_for_binary(flat, binary):
    d, e = normalize_offspring(binary, flat)
    assert d == binary and e is flat
    d2 = OffspringDistribution.from_dict({1: 0.5, 3: 0.5})
    assert normalize_offspring(d2, flat)[0] == d2


def test_normalisation_of_triple_split():
    env = constant_environment(1.0)
    d, e = normalize_offspring(OffspringDistribution.from_dict({3: 1.0}), env)
    assert d.p == pytest.approx((0.5, 0.0, 0.5))
    assert d.mu == pytest.approx(2.0, abs=1e-15)
    assert e.es == 2.0 and np.all(e.knots == 2.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=6))
def test_normalised_mean_is_two(raw):
    p = np.array(raw) + 1e-3
    p /= p.sum()
    try:
        d = OffspringDistribution(tuple(p))
    except ValueError:
        return                      # mean <= 1 or rounding; not a valid law
    nd, ne = normalize_offspring(d, constant_environment(1.0))
    assert nd.mu == pytest.approx(2.0, abs=1e-12)
    assert ne.es == pytest.approx(d.mu - 1.0)


def test_tree_at_time_zero(flat, binary):
    r = simulate_tree(flat, binary, 1.5, 0.0, seed=3)
    assert r.population == 1 and r.max == 1.5


def test_mean_population_is_exponential(flat, binary):
    mx, pop, nb, st_ = sample_maxima(flat, binary, 0.0, 1.0, 10000, seed=11, return_all=True)
    se = pop.std(ddof=1) / math.sqrt(pop.size)
    assert abs(pop.mean() - math.e) <= 3 * se


def test_lattice_mean_population(binary):
    lat = sample_environment(EnvSpec("lattice-iid", 1.0, 1.0 + 1e-12, x_lo=-60, x_hi=60), 0)
    mx, pop, nb, st_ = sample_lattice_maxima(lat, binary, 0, 1.0, 10000, seed=5, return_all=True)
    se = pop.std(ddof=1) / math.sqrt(pop.size)
    assert abs(pop.mean() - math.e) <= 3 * se


def test_tail_probability_agrees_with_pde(flat, binary):
    mx = sample_maxima(flat, binary, 0.0, 2.0, 10000, seed=2)
    p, se = exceedance(mx, 2.0)
    sol = pde.solve_fkpp(flat, binary, pde.FkppRun(y=2.0, t_end=2.0, dx=0.05))
    assert abs(sol.trace0[-1] - p) <= 3 * se


def test_branch_gaps_are_exponential_at_constant_rate(binary):
    env = constant_environment(1.5, -200.0, 200.0)
    gaps = sample_lineage_gaps(env, 0.0, 4000, seed=9)
    assert stats.kstest(gaps, "expon", args=(0, 1 / 1.5)).pvalue > 1e-3


def test_replicates_depend_only_on_seed_and_index(flat, binary):
    a = sample_maxima(flat, binary, 0.0, 1.0, 10, seed=4)
    b = sample_maxima(flat, binary, 0.0, 1.0, 5, seed=4)
    assert np.array_equal(a[:5], b)
    assert not np.array_equal(a, sample_maxima(flat, binary, 0.0, 1.0, 10, seed=5))


def test_single_tree_reproducible(rough, binary):
    a = simulate_tree(rough, binary, 0.0, 3.0, seed=21)
    b = simulate_tree(rough, binary, 0.0, 3.0, seed=21)
    assert np.array_equal(a.positions, b.positions)
    assert a.population == a.positions.size and a.max == a.positions.max()


def test_particle_cap_flags_truncation(flat, binary):
    r = simulate_tree(flat, binary, 0.0, 5.0, seed=1, particle_cap=8)
    assert r.truncated
    with pytest.raises(BranchingError):
        sample_maxima(flat, binary, 0.0, 5.0, 20, seed=1, cap=8)


def test_domain_exit_is_an_error(binary):
    narrow = constant_environment(1.0, -2.0, 2.0)
    with pytest.raises(EnvError):
        sample_maxima(narrow, binary, 0.0, 5.0, 50, seed=0)


def test_lattice_tree_basics(binary):
    lat = sample_environment(EnvSpec("lattice-iid", 0.5, 1.0, x_lo=-80, x_hi=80), 1)
    r = simulate_lattice_tree(lat, binary, 0, 0.0, seed=1)
    assert r.max == 0
    r = simulate_lattice_tree(lat, binary, 0, 3.0, seed=1)
    assert np.all(r.positions == np.round(r.positions))


def test_quantiles_monotone_and_resolvable():
    x = np.random.default_rng(0).normal(size=1000)
    q = quantiles_from_samples(x, [0.25, 0.5, 0.75])
    assert np.all(np.diff(q.values) >= 0)
    assert np.all(q.lower <= q.values) and np.all(q.values <= q.upper)
    with pytest.raises(ValueError):
        quantiles_from_samples(x[:100], [0.999])


def test_mc_median_within_ci_of_pde(flat, binary):
    q = max_quantiles_mc(flat, binary, 0.0, 3.0, 4000, [0.5], seed=8)
    qt = pde.quantile_table(flat, binary, np.arange(-5.0, 15.0, 0.05), np.array([3.0]), dx=0.05)
    assert q.lower[0] <= qt.median()[0] <= q.upper[0]


def test_order_statistic_interval_covers_known_quantile():
    # exponential samples: the true median is ln 2
    hits = 0
    for s in range(200):
        x = np.random.default_rng(s).exponential(size=300)
        q = quantiles_from_samples(x, [0.5])
        hits += q.lower[0] <= math.log(2) <= q.upper[0]
    assert hits >= 180
