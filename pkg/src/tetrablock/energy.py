"""Leading-order droplet energy e0 and configuration energies.

For one bubble with lobe masses m,

    e0(m) = p(m) + sum_ij Gamma_ij m_i m_j / (4 pi)

where p is the perimeter of the triple, double or single bubble selected by
the zero pattern of m.  (The double and single forms are the same quadratic
form with the missing masses set to zero.)
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .errors import DomainError
from .geometry import Kind, MassTriple


class GammaMatrix:
    """Symmetric 3x3 interaction matrix with finite entries and a
    nonnegative diagonal.

    In the scaling that produces the droplet limit, Gamma_ij relates to the
    physical coefficients by gamma_ij = Gamma_ij / (|log eta| eta^3).
    """

    __slots__ = ("_a",)

    def __init__(self, entries):
        a = np.array(entries, dtype=float)
        if a.shape != (3, 3):
            raise DomainError(f"Gamma must be 3x3, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DomainError("Gamma has non-finite entries")
        if not np.array_equal(a, a.T):
            raise DomainError("Gamma must be exactly symmetric")
        if np.any(np.diag(a) < 0):
            raise DomainError("Gamma must have a nonnegative diagonal")
        a.setflags(write=False)
        self._a = a

    @classmethod
    def of(cls, g):
        return g if isinstance(g, GammaMatrix) else cls(g)

    @classmethod
    def diagonal(cls, g1, g2, g3):
        return cls(np.diag([g1, g2, g3]))

    @classmethod
    def zeros(cls):
        return cls(np.zeros((3, 3)))

    @property
    def values(self):
        return self._a

    @property
    def is_diagonal(self):
        return not np.any(self._a[~np.eye(3, dtype=bool)])

    def __array__(self, dtype=None, copy=None):
        return self._a.astype(dtype) if dtype is not None else self._a.copy()

    def __getitem__(self, idx):
        return self._a[idx]

    def __eq__(self, other):
        return isinstance(other, GammaMatrix) and np.array_equal(self._a, other._a)

    def __repr__(self):
        return f"GammaMatrix({self._a.tolist()})"

    def permuted(self, perm):
        p = list(perm)
        return GammaMatrix(self._a[np.ix_(p, p)])


@dataclass(frozen=True)
class Configuration:
    """Finite list of bubbles whose lobe masses partition the totals."""

    bubbles: tuple
    totals: np.ndarray = field(init=False, compare=False)

    def __post_init__(self):
        bubbles = tuple(MassTriple.of(b) for b in self.bubbles)
        object.__setattr__(self, "bubbles", bubbles)
        if bubbles:
            totals = np.array([math.fsum(b.values[i] for b in bubbles) for i in range(3)])
        else:
            totals = np.zeros(3)
        object.__setattr__(self, "totals", totals)

    def __len__(self):
        return len(self.bubbles)

    def __iter__(self):
        return iter(self.bubbles)

    @property
    def masses(self):
        return np.array([b.values for b in self.bubbles]).reshape(-1, 3)

    def lobe_counts(self):
        return (self.masses > 0).sum(axis=0)

    def kind_counts(self):
        """Counts keyed by bubble label, e.g. {'Triple': 2, 'Single(3)': 4}."""
        out = {}
        for b in self.bubbles:
            out[b.label] = out.get(b.label, 0) + 1
        return out

    def canonical(self):
        """Same configuration with bubbles in a fixed order (by kind, then
        decreasing masses)."""
        key = lambda b: (-len(b.lobes), b.lobes, tuple(-v for v in b.values))
        return Configuration(tuple(sorted(self.bubbles, key=key)))

    def check_totals(self, M, tol=1e-12):
        M = np.asarray(M, float)
        scale = np.maximum(1.0, np.abs(M))
        return bool(np.all(np.abs(self.totals - M) <= tol * scale))


def _gamma(G):
    return GammaMatrix.of(G).values


def interaction(m, Gamma):
    m = np.asarray(MassTriple.of(m).values)
    return float(m @ _gamma(Gamma) @ m) / (4.0 * math.pi)


def e0(m, Gamma, guess=None):
    """Droplet energy of one bubble."""
    m = MassTriple.of(m)
    return geometry.solve(m, guess=guess).perimeter + interaction(m, Gamma)


def e0_and_geometry(m, Gamma, guess=None):
    m = MassTriple.of(m)
    geom = geometry.solve(m, guess=guess)
    return geom.perimeter + interaction(m, Gamma), geom


def e0_gradient(m, Gamma, guess=None, geom=None):
    """dE/dm_i = (Gamma m)_i / (2 pi) + 1/r_i for lobes present in m.

    Entries for absent lobes are NaN ("inactive"): the derivative there is
    not a stationarity quantity, so it is neither 0 nor +inf.
    """
    m = MassTriple.of(m)
    if geom is None:
        geom = geometry.solve(m, guess=guess)
    lin = _gamma(Gamma) @ m.values / (2.0 * math.pi)
    g = np.full(3, np.nan)
    for i in m.lobes:
        k = geom.curvatures[i]
        g[i] = lin[i] + (k if np.isfinite(k) else np.inf)
    return g


def e0_hessian(m, Gamma, geom=None, rel_step=1e-4):
    """Hessian of e0 over the present lobes, shape (n_lobes, n_lobes).

    The perimeter block d(1/r_i)/dm_j is taken by central differences of the
    solved curvatures.
    """
    m = MassTriple.of(m)
    lobes = m.lobes
    vals = m.values
    G = _gamma(Gamma)[np.ix_(lobes, lobes)] / (2.0 * math.pi)
    n = len(lobes)
    if m.kind is Kind.SINGLE:
        x = vals[lobes[0]]
        return G + np.array([[-0.5 * math.sqrt(math.pi) * x ** -1.5]])
    if geom is None:
        geom = geometry.solve(m)
    H = np.empty((n, n))
    for col, j in enumerate(lobes):
        h = rel_step * vals[j]
        up = vals.copy()
        dn = vals.copy()
        up[j] += h
        dn[j] -= h
        kp = geometry.solve(up, guess=geom).curvatures
        km = geometry.solve(dn, guess=geom).curvatures
        H[:, col] = [(kp[i] - km[i]) / (2.0 * h) for i in lobes]
    H = 0.5 * (H + H.T)
    return H + G


def configuration_energy(config, Gamma):
    """Sum of e0 over the bubbles (compensated, order independent)."""
    return math.fsum(e0(b, Gamma) for b in config)
