"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are also
collected in an "acceptance criteria" section of the terminal summary.
"""

import itertools
import math
import time

import numpy as np
import pytest

from tetrablock import geometry as geo
from tetrablock import partition as part
from tetrablock import torus as tor
from tetrablock.energy import Configuration, GammaMatrix

GRID = np.logspace(-2, 2, 3)
N_RANDOM = 20


@pytest.fixture(scope="module")
def random_suite():
    """Twenty random diagonal-Gamma instances and their optima."""
    rng = np.random.default_rng(7)
    out = []
    for _ in range(N_RANDOM):
        M = rng.uniform(1.0, 12.0, 3)
        G = GammaMatrix.diagonal(*rng.uniform(0.5, 3.0, 3))
        out.append((M, G, part.minimize_e0bar(M, G, seed=0)))
    return out


def test_criterion_01_geometry_exactness(report):
    t0 = time.perf_counter()
    worst = np.zeros(3)
    for m in itertools.product(GRID, repeat=3):
        g = geo.solve_triple(m)
        worst = np.maximum(worst, [geo.area_error(g), geo.junction_angle_error(g),
                                   geo.reciprocal_residual(g)])
    elapsed = time.perf_counter() - t0
    ok = worst[0] < 1e-10 and worst[1] < 1e-8 and worst[2] < 1e-10 and elapsed < 5.0
    report(1, "geometry exactness on the 3x3x3 grid", ok,
           f"area {worst[0]:.1e}, angle {worst[1]:.1e}, curvature {worst[2]:.1e}, {elapsed:.2f}s")
    assert ok


def test_criterion_02_perimeter_derivative(report):
    h = 1e-5
    worst = 0.0
    for m in itertools.product(GRID, repeat=3):
        m = np.array(m)
        k = geo.perimeter_gradient(m)
        for i in range(3):
            e = np.eye(3)[i] * h
            fd = (geo.perimeter(m + e) - geo.perimeter(m - e)) / (2 * h)
            worst = max(worst, abs(fd - k[i]) / k[i])
    ok = worst < 1e-6
    report(2, "dp/dm_i = 1/r_i by central differences", ok, f"max rel error {worst:.1e}")
    assert ok


def test_criterion_03_symmetric_degeneration(report):
    walls = max(np.max(np.abs(geo.solve_triple((a, a, a)).curvatures[3:])) for a in GRID)
    errors = []
    for m1, m2 in ((1.0, 1.0), (1.0, 2.0), (0.5, 3.0)):
        pd = geo.solve_double(m1, m2).perimeter
        errors.append([abs(geo.perimeter((m1, m2, 10.0 ** -k)) - pd) for k in range(2, 9)])
    at8 = max(e[-1] for e in errors)
    ok = walls < 1e-10 and at8 < 1e-3
    report(3, "straight walls for equal masses, double limit", ok,
           f"|k4..6| {walls:.1e}, error at 1e-8 {at8:.1e}")
    assert ok


def test_criterion_04_max_mass_bound(report, random_suite):
    worst = 0.0
    for M, G, res in random_suite:
        ratio = res.configuration.masses.max(axis=0) / part.mass_upper_bound(G)
        worst = max(worst, float(ratio.max()))
    ok = worst <= 1 + 1e-6
    report(4, "no lobe above 8 pi / Gamma_ii^(2/3)", ok,
           f"{len(random_suite)} instances, max m/m+ = {worst:.3f}")
    assert ok


def test_criterion_05_single_constituent(report):
    t0 = time.perf_counter()
    res = part.minimize_e0bar((40, 0, 0), np.eye(3))
    elapsed = time.perf_counter() - t0
    f = {n: 2 * math.sqrt(40 * math.pi * n) + 1600 / (4 * math.pi * n) for n in range(1, 11)}
    n_best = min(f, key=f.get)
    m = res.configuration.masses[:, 0]
    ok = (n_best == 5 and len(m) == 5 and np.ptp(m) < 1e-9 * m.max()
          and abs(res.energy - f[5]) < 1e-8 and elapsed < 1.0)
    report(5, "M = (40,0,0), Gamma = I gives five equal singles", ok,
           f"energy {res.energy:.12f} vs {f[5]:.12f}, {elapsed:.2f}s")
    assert ok


def test_criterion_06_kkt_stationarity(report, random_suite):
    worst = max(float(np.max(res.spread)) for _, _, res in random_suite)
    ok = worst < 1e-6
    report(6, "multiplier spread per type", ok, f"max spread {worst:.1e}")
    assert ok


def test_criterion_07_oracle_equivalence(report, random_suite):
    small = [(M, G, res) for M, G, res in random_suite if len(res.configuration) <= 3]
    gaps = []
    for M, G, res in small:
        _, E, _ = part.brute_force_oracle(M, G, max_bubbles=3, grid_step=M.max() / 10, details=True)
        gaps.append(abs(E - res.energy))
    worst = max(gaps)
    ok = len(small) == N_RANDOM and worst < 1e-5
    report(7, "optimizer vs brute-force oracle", ok,
           f"{len(small)} instances with <= 3 bubbles, max gap {worst:.1e}")
    assert ok


def test_criterion_08_coexistence(report):
    M, G, _ = part.coexistence_params(2, 2, 2)
    t0 = time.perf_counter()
    res = part.minimize_e0bar(M, G, count_cap=12, seed=0)
    elapsed = time.perf_counter() - t0
    nt, nd, ns = part.coexistence_counts(res.configuration)
    ok = nt >= 2 and nd >= 2 and ns >= 2 and elapsed < 300.0
    report(8, "coexistence parameters for (2,2,2)", ok,
           f"{res.signature.label}, {elapsed:.0f}s, cap saturated: {res.cap_saturated}")
    assert ok


def test_criterion_09_greens_function(report):
    ev = tor.default_evaluator()
    mean = tor.zero_mean_check(ev, 256)
    X = np.random.default_rng(9).uniform(-0.5, 0.5, (200, 2))
    even = bool(np.array_equal(ev.value(X), ev.value(-X)))
    h = 1e-3
    stencil = np.array([[h, 0], [-h, 0], [0, h], [0, -h]])
    far = X[np.hypot(X[:, 0], X[:, 1]) > 0.1][:40]
    lap = max(abs((ev.value(x + stencil).sum() - 4 * ev.value(x)) / h ** 2 - 1.0) for x in far)
    r512, r1024 = tor.oracle_regular_at_zero(512), tor.oracle_regular_at_zero(1024)
    r_ev = ev.regular(np.zeros(2))
    ok = (abs(mean) < 1e-6 and even and lap < 1e-3 and abs(r1024 - r512) < 1e-8
          and abs(r_ev - r1024) < 1e-8)
    report(9, "Green's function checks", ok,
           f"mean {mean:.1e}, even {even}, laplacian {lap:.1e}, "
           f"R(0) drift {abs(r1024 - r512):.1e}, evaluator vs oracle {abs(r_ev - r1024):.1e}")
    assert ok


def test_criterion_10_eta_expansion(report):
    cfg = Configuration(((1, 1, 1), (0, 0, 2)))
    place = tor.TorusPlacement([[0.0, 0.0], [0.5, 0.5]])
    scaled = []
    for eta in (1e-2, 1e-3, 1e-4):
        d = tor.assemble_E_eta(cfg, place, eta, np.eye(3))
        scaled.append(abs(d["total"] - d["e0_sum"]) * abs(math.log(eta)))
    ok = all(b <= 1.1 * a for a, b in zip(scaled, scaled[1:]))
    report(10, "|E_eta - sum e0| |log eta| non-increasing", ok,
           ", ".join(f"{s:.6f}" for s in scaled))
    assert ok


def test_criterion_11_separation(report):
    details, ok = [], True
    mix = [(1, 1, 1), (0.5, 0, 2), (0, 1, 0), (2, 0.5, 0), (1, 1, 1), (0, 0, 3)]
    # separation needs every pair to repel, hence positive off-diagonals
    G = np.eye(3) + 0.5 * (1 - np.eye(3))
    for K in range(2, 7):
        for cfg in (Configuration(tuple((1, 1, 1) for _ in range(K))), Configuration(tuple(mix[:K]))):
            p = tor.optimize_placement(cfg, G)
            d = tor.min_pairwise_distance(p).distance
            d0 = tor.min_pairwise_distance(tor.TorusPlacement(p.initial_positions)).distance
            good = d >= 1 / (2 * p.n_grid) and (d >= d0 or p.energy < p.initial_energy)
            ok &= good
            details.append(f"K={K} d={d:.3f}")
    report(11, "placements keep distance >= 1/(2 n_grid)", ok, ", ".join(details[::2]))
    assert ok
