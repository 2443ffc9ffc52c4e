import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from tetrablock import partition as part
from tetrablock.energy import Configuration, GammaMatrix, configuration_energy, e0
from tetrablock.errors import DomainError
from tetrablock.partition import Signature

I3 = np.eye(3)
Z3 = np.zeros((3, 3))


def f_singles(M, n):
    return 2 * math.sqrt(M * math.pi * n) + M ** 2 / (4 * math.pi * n)


@pytest.mark.parametrize("g,expected", [(1.0, 8 * math.pi), (8.0, 2 * math.pi), (0.0, math.inf)])
def test_mass_upper_bound(g, expected):
    assert part.mass_upper_bound(np.diag([g, 1.0, 1.0]))[0] == pytest.approx(expected, rel=1e-15)


def test_mass_lower_bound_branches():
    c1, c2 = part.default_comparability()
    C2 = 2 * math.sqrt(math.pi * c1)
    mm = part.mass_lower_bound((1, 1, 1), Z3, 10.0, c1, c2, C2)
    assert_allclose(mm, c1 * (C2 / (40 * c2)) ** 2, rtol=1e-14)
    mm = part.mass_lower_bound((1, 1, 1), I3, 10.0, c1, c2, C2)
    assert mm[0] == mm[1] == mm[2] > 0
    with pytest.raises(DomainError):
        part.mass_lower_bound((1, 1, 1), I3, 10.0, 0.0, c2, C2)


def test_bounds_report_single_type():
    b = part.bounds_report((40, 0, 0), I3, energy_upper=76.0)
    assert b.m_minus[0] > 0
    assert 1 <= b.count_upper[0] < math.inf
    assert b.count_lower[0] == 2
    assert np.all(b.m_minus[np.isfinite(b.m_minus)] <= b.m_plus[np.isfinite(b.m_minus)])


def test_enumerate_single_type():
    sigs = part.enumerate_signatures((5, 0, 0), I3, 4)
    assert {s.n_single for s in sigs} == {(n, 0, 0) for n in range(1, 5)}
    assert all(s.n_triple == 0 and s.n_double == (0, 0, 0) for s in sigs)


def test_enumerate_cap_one():
    # one lobe per type: every covering of the three types
    sigs = part.enumerate_signatures((1, 1, 1), GammaMatrix(np.full((3, 3), 0.5)), 1)
    assert sorted(s.label for s in sigs) == ["1D12+1S3", "1D13+1S2", "1D23+1S1", "1S1+1S2+1S3", "1T"]
    assert sigs.n_pruned == 0
    # diagonal Gamma prunes everything but the triple and records why
    sigs = part.enumerate_signatures((1, 1, 1), I3, 1)
    assert [s.label for s in sigs] == ["1T"]
    assert sigs.n_pruned == 4


def test_enumerate_rejects_zero_cap():
    with pytest.raises(DomainError):
        part.enumerate_signatures((1, 1, 1), I3, 0)


def test_enumerate_diagonal_pruning():
    sigs = part.enumerate_signatures((3, 3, 3), I3, 3)
    assert sigs.n_pruned > 0
    for s in sigs:
        assert sum(1 for v in s.n_single if v) <= 1
        assert part.prune_reason(s) is None
    full = part.enumerate_signatures((3, 3, 3), GammaMatrix(I3 + 1e-3 * (1 - I3)), 3)
    assert full.n_pruned == 0 and len(full) > len(sigs)


def test_optimize_masses_equal_singles():
    # single energy is convex above m = pi, so the equal split is the minimizer
    cfg = part.optimize_masses(Signature(n_single=(5, 0, 0)), (40, 0, 0), I3)
    assert_allclose(cfg.masses[:, 0], 8.0, rtol=1e-10)


def test_optimize_masses_single_triple():
    cfg = part.optimize_masses(Signature(n_triple=1), (1, 1, 1), I3)
    assert_allclose(cfg.masses, [[1, 1, 1]], rtol=1e-14)


def test_optimize_masses_two_triples():
    # the equal split is a KKT point of the two-triple class
    sol, _, _ = part.solve_signature(Signature(n_triple=2), (2, 2, 2), I3, symmetric=True)
    cfg = sol.configuration
    assert_allclose(cfg.masses, [[1, 1, 1], [1, 1, 1]], rtol=1e-12)
    assert_allclose(configuration_energy(cfg, I3), 2 * e0((1, 1, 1), I3), rtol=1e-12)
    assert np.all(part.kkt_residual(cfg, I3) < 1e-6)
    # but not a minimizer: multi-start drains one triple into the other
    best = part.optimize_masses(Signature(n_triple=2), (2, 2, 2), I3, n_starts=8, seed=3)
    assert configuration_energy(best, I3) < configuration_energy(cfg, I3)
    assert_allclose(best.masses, [[2, 2, 2]], rtol=1e-12)


def test_optimize_masses_infeasible():
    with pytest.raises(DomainError):
        part.optimize_masses(Signature(n_single=(1, 0, 0)), (1, 1, 0), I3)


def test_minimize_single_type_closed_form():
    best = min(range(1, 11), key=lambda n: f_singles(40.0, n))
    res = part.minimize_e0bar((40, 0, 0), I3)
    cfg, bounds = res
    assert best == 5 and len(cfg) == 5
    assert_allclose(cfg.masses[:, 0], 8.0, rtol=1e-10)
    assert_allclose(res.energy, f_singles(40.0, 5), atol=1e-8)
    assert not res.cap_saturated


def test_minimize_zero_gamma_gives_triple():
    res = part.minimize_e0bar((1, 1, 1), Z3, count_cap=2)
    assert res.configuration.kind_counts() == {"Triple": 1}
    for s in part.enumerate_signatures((1, 1, 1), Z3, 2):
        cfg = part.optimize_masses(s, (1, 1, 1), Z3, n_starts=2)
        assert configuration_energy(cfg, Z3) >= res.energy - 1e-9


def test_minimize_pi_single():
    res = part.minimize_e0bar((math.pi, 0, 0), I3)
    assert len(res.configuration) == 1
    assert f_singles(math.pi, 1) < f_singles(math.pi, 2)


def test_minimize_deterministic():
    a = part.minimize_e0bar((3, 2, 1), np.diag([1.0, 2.0, 0.5]), seed=11)
    b = part.minimize_e0bar((3, 2, 1), np.diag([1.0, 2.0, 0.5]), seed=11)
    assert a.energy == b.energy
    assert np.array_equal(a.configuration.masses, b.configuration.masses)


def test_kkt_five_singles():
    cfg = Configuration(tuple((8.0, 0, 0) for _ in range(5)))
    lam, spread = part.multipliers_and_spread(cfg, I3)
    assert spread[0] == 0.0
    assert_allclose(lam[0], 8 / (2 * math.pi) + math.sqrt(math.pi / 8), rtol=1e-14)
    assert lam[0] == pytest.approx(1.9000, abs=2e-4)


@pytest.mark.parametrize("delta", [1e-3, 2e-3])
def test_kkt_perturbation_is_linear(delta):
    m = [8.0 + delta, 8.0 - delta, 8.0, 8.0, 8.0]
    spread = part.kkt_residual(Configuration(tuple((v, 0, 0) for v in m)), I3)[0]
    # d/dm (m/2pi + sqrt(pi/m)) at m = 8, times the 2 delta gap
    slope = 1 / (2 * math.pi) - 0.5 * math.sqrt(math.pi) * 8 ** -1.5
    assert_allclose(spread, 2 * delta * abs(slope), rtol=1e-2)


def test_moves_split_above_max_mass():
    m_plus = part.mass_upper_bound(I3)[0]
    new = part.merge_split_moves(Configuration(((1.2 * m_plus, 0, 0),)), I3)
    assert new is not None and len(new) == 2


def test_moves_merge_two_singles():
    new = part.merge_split_moves(Configuration(((1, 0, 0), (0, 1, 0))), Z3)
    assert new is not None and new.kind_counts() == {"Double(1,2)": 1}


def test_moves_none_at_optimum():
    assert part.merge_split_moves(Configuration(tuple((8.0, 0, 0) for _ in range(5))), I3) is None


def test_oracle_small_cases():
    cfg = part.brute_force_oracle((1, 1, 1), Z3, max_bubbles=2)
    assert cfg.kind_counts() == {"Triple": 1}
    cfg = part.brute_force_oracle((math.pi, 0, 0), I3, max_bubbles=3)
    assert len(cfg) == 1
    with pytest.raises(DomainError):
        part.brute_force_oracle((1, 1, 1), I3, max_bubbles=3, grid_step=1e-3, budget=1000)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_oracle_not_below_optimizer(seed):
    rng = np.random.default_rng(seed)
    M = rng.uniform(0.5, 4.0, 3)
    G = np.diag(rng.uniform(0.5, 2.0, 3))
    res = part.minimize_e0bar(M, G)
    _, E, _ = part.brute_force_oracle(M, G, max_bubbles=3, details=True)
    assert E >= res.energy - 1e-6


def test_coexistence_certificate():
    M, G, cert = part.coexistence_params(2, 3, 4)
    assert G.is_diagonal
    c = cert["construction"]
    assert c["holds"] and c["lhs"] > c["rhs"]
    assert M[0] / cert["m_plus"][0] > 2
    assert len(cert["cascade"]) == 3
    with pytest.raises(DomainError):
        part.coexistence_params(0, 1, 1)
    with pytest.raises(DomainError):
        part.coexistence_params(1.5, 1, 1)


def test_coexistence_counts():
    cfg = Configuration(((1, 1, 1), (1, 1, 1), (0, 1, 1), (0, 0, 1), (0, 0, 2), (1, 0, 0)))
    nt, nd, ns = part.coexistence_counts(cfg)
    assert (nt, nd, ns) == (2, 1, 2)


def test_coexistence_one_each():
    M, G, _ = part.coexistence_params(1, 1, 1)
    res = part.minimize_e0bar(M, G, count_cap=8)
    nt, nd, ns = part.coexistence_counts(res.configuration)
    assert not res.cap_saturated
    assert nt >= 1 and nd >= 1 and ns >= 1


small = st.floats(min_value=0.3, max_value=6.0)
diag = st.floats(min_value=0.2, max_value=3.0)


@settings(max_examples=6, deadline=None)
@given(small, small, small, diag, diag, diag)
def test_minimize_invariants_property(a, b, c, g1, g2, g3):
    M = np.array([a, b, c])
    G = np.diag([g1, g2, g3])
    res = part.minimize_e0bar(M, G)
    cfg = res.configuration
    assert cfg.check_totals(M, tol=1e-12)
    assert np.all(cfg.masses >= 0)
    assert np.all(cfg.masses.max(axis=0) <= part.mass_upper_bound(G) * (1 + 1e-6))
    assert np.all(res.spread < 1e-6)
    assert part.merge_split_moves(cfg, G) is None
