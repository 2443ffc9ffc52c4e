import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from tetrablock import geometry as geo
from tetrablock.energy import (Configuration, GammaMatrix, configuration_energy, e0, e0_gradient,
                               e0_hessian)
from tetrablock.errors import DomainError

I3 = np.eye(3)
GENERIC = np.array([[1.0, 0.3, 0.2], [0.3, 2.0, 0.5], [0.2, 0.5, 1.5]])

masses = st.floats(min_value=0.1, max_value=10.0, allow_nan=False)


def test_gamma_validation():
    with pytest.raises(DomainError):
        GammaMatrix([[1, 2, 0], [0, 1, 0], [0, 0, 1]])
    with pytest.raises(DomainError):
        GammaMatrix(np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(DomainError):
        GammaMatrix(np.full((3, 3), np.inf))
    with pytest.raises(DomainError):
        GammaMatrix(np.eye(2))
    # negative off-diagonals are allowed here
    assert not GammaMatrix([[1, -1, 0], [-1, 1, 0], [0, 0, 1]]).is_diagonal
    assert GammaMatrix.diagonal(1, 2, 3).is_diagonal


def test_configuration_totals():
    c = Configuration(((1, 0, 0), (0.5, 2, 0), (0, 0, 3)))
    assert_allclose(c.totals, [1.5, 2.0, 3.0])
    assert c.check_totals((1.5, 2.0, 3.0))
    assert c.kind_counts() == {"Single(1)": 1, "Double(1,2)": 1, "Single(3)": 1}
    assert_allclose(c.lobe_counts(), [2, 1, 1])


def test_e0_single_closed_form():
    assert_allclose(e0((4 * math.pi, 0, 0), I3), 8 * math.pi, rtol=1e-14)


def test_e0_zero_gamma_is_perimeter():
    m = (1.0, 2.0, 0.5)
    assert e0(m, np.zeros((3, 3))) == geo.perimeter(m)


def test_e0_double_cross_term():
    G = np.zeros((3, 3))
    G[0, 1] = G[1, 0] = 2 * math.pi
    assert_allclose(e0((1, 1, 0), G), geo.solve_double(1, 1).perimeter + 1.0, rtol=1e-14)


def test_e0_gradient_single():
    g = e0_gradient((math.pi, 0, 0), I3)
    assert_allclose(g[0], 1.5, rtol=1e-14)
    assert np.isnan(g[1]) and np.isnan(g[2])


def test_e0_gradient_zero_gamma():
    m = (1.0, 1.0, 1.0)
    assert_allclose(e0_gradient(m, np.zeros((3, 3))), geo.perimeter_gradient(m), rtol=1e-14)


@pytest.mark.parametrize("m", [(2, 1, 0.5), (1, 3, 0), (0.4, 0.4, 0.4)])
def test_e0_gradient_fd(m):
    m = np.asarray(m, float)
    g = e0_gradient(m, GENERIC)
    h = 1e-5
    for i in np.flatnonzero(m > 0):
        e = np.eye(3)[i] * h
        fd = (e0(m + e, GENERIC) - e0(m - e, GENERIC)) / (2 * h)
        assert abs(fd - g[i]) / abs(g[i]) < 1e-6


def test_e0_hessian_symmetric():
    H = e0_hessian((2, 1, 0.5), GENERIC)
    assert_allclose(H, H.T, atol=1e-6)


def test_configuration_energy():
    two = Configuration(((math.pi, 0, 0), (math.pi, 0, 0)))
    assert_allclose(configuration_energy(two, np.zeros((3, 3))), 4 * math.pi, rtol=1e-14)
    triple = Configuration(((1, 1, 1),))
    singles = Configuration(((1, 0, 0), (0, 1, 0), (0, 0, 1)))
    Z = np.zeros((3, 3))
    assert configuration_energy(triple, Z) < configuration_energy(singles, Z)
    five = Configuration(tuple((8.0, 0, 0) for _ in range(5)))
    assert_allclose(configuration_energy(five, I3),
                    2 * math.sqrt(40 * math.pi * 5) + 1600 / (4 * math.pi * 5), rtol=1e-14)


def test_configuration_energy_order_independent():
    bubbles = [(1, 0.5, 0.2), (0, 2, 1), (3, 0, 0)]
    E = [configuration_energy(Configuration(tuple(p)), GENERIC)
         for p in itertools.permutations(bubbles)]
    assert max(E) == min(E)


def test_e0_continuity_across_kinds():
    G = GENERIC
    assert abs(e0((1, 2, 1e-9), G) - e0((1, 2, 0), G)) < 1e-3
    assert abs(e0((1, 1e-9, 0), G) - e0((1, 0, 0), G)) < 1e-3


@settings(max_examples=20, deadline=None)
@given(masses, masses, masses, st.permutations([0, 1, 2]))
def test_e0_permutation_equivariance(a, b, c, perm):
    m = np.array([a, b, c])
    G = GammaMatrix(GENERIC)
    assert abs(e0(m[perm], G.permuted(perm)) - e0(m, G)) <= 1e-12 * max(1.0, e0(m, G))


@settings(max_examples=20, deadline=None)
@given(masses, masses, masses, st.integers(0, 2), st.floats(0.01, 5.0))
def test_e0_monotone_in_diagonal(a, b, c, i, bump):
    m = (a, b, c)
    G = GENERIC.copy()
    G[i, i] += bump
    assert e0(m, G) > e0(m, GENERIC)
