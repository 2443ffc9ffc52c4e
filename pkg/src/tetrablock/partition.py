"""Global minimization of the sum of droplet energies over bubble
configurations with prescribed total masses.

The discrete part of the problem is a *signature*: how many triple bubbles,
doubles of each pair of types and singles of each type appear.  For a fixed
signature the lobe masses are found by a projected-gradient iteration on the
per-type simplices followed by a Newton polish of the active-set KKT system.
Stationary points satisfy

    (1/2pi) sum_j Gamma_ij m_j^k + 1/r_i^k = lambda_i

for every bubble k carrying a type-i lobe.
"""

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize as scipy_minimize

from . import geometry
from .energy import Configuration, GammaMatrix, configuration_energy, e0, e0_hessian
from .errors import DomainError, NumericError
from .geometry import MassTriple

log = logging.getLogger(__name__)

PAIRS = ((0, 1), (0, 2), (1, 2))
HARD_CAP = 12
SNAP_RATIO = 1e-9  # lobes lighter than this fraction of their type total are dropped
KKT_TOL = 1e-10
TIE_TOL = 1e-9
SCREEN_TOL = 1e-5
ISO_CONSTANT = 2.0 * math.sqrt(math.pi)  # p >= 2 sqrt(pi m) for each lobe

_TWO_PI = 2.0 * math.pi


# ----------------------------------------------------------------------------
# signatures


@dataclass(frozen=True, order=True)
class Signature:
    """Bubble counts: triples, doubles per pair (12, 13, 23), singles per type."""

    n_triple: int = 0
    n_double: tuple = (0, 0, 0)
    n_single: tuple = (0, 0, 0)

    def __post_init__(self):
        nd = tuple(int(v) for v in self.n_double)
        ns = tuple(int(v) for v in self.n_single)
        nt = int(self.n_triple)
        if len(nd) != 3 or len(ns) != 3:
            raise DomainError("n_double and n_single need three entries")
        if min((nt,) + nd + ns) < 0:
            raise DomainError("signature counts must be nonnegative")
        if nt + sum(nd) + sum(ns) < 1:
            raise DomainError("a signature needs at least one bubble")
        object.__setattr__(self, "n_triple", nt)
        object.__setattr__(self, "n_double", nd)
        object.__setattr__(self, "n_single", ns)

    @classmethod
    def of_configuration(cls, config):
        nt, nd, ns = 0, [0, 0, 0], [0, 0, 0]
        for b in config:
            lobes = b.lobes
            if len(lobes) == 3:
                nt += 1
            elif len(lobes) == 2:
                nd[PAIRS.index(lobes)] += 1
            else:
                ns[lobes[0]] += 1
        return cls(nt, tuple(nd), tuple(ns))

    def groups(self):
        """(lobes, multiplicity) for each bubble kind present."""
        out = []
        if self.n_triple:
            out.append(((0, 1, 2), self.n_triple))
        for pair, n in zip(PAIRS, self.n_double):
            if n:
                out.append((pair, n))
        for i, n in enumerate(self.n_single):
            if n:
                out.append(((i,), n))
        return out

    @property
    def lobe_counts(self):
        c = np.zeros(3, dtype=int)
        for lobes, n in self.groups():
            c[list(lobes)] += n
        return c

    @property
    def n_bubbles(self):
        return self.n_triple + sum(self.n_double) + sum(self.n_single)

    @property
    def label(self):
        parts = []
        if self.n_triple:
            parts.append(f"{self.n_triple}T")
        for (a, b), n in zip(PAIRS, self.n_double):
            if n:
                parts.append(f"{n}D{a + 1}{b + 1}")
        for i, n in enumerate(self.n_single):
            if n:
                parts.append(f"{n}S{i + 1}")
        return "+".join(parts)

    def is_feasible(self, M):
        counts = self.lobe_counts
        M = np.asarray(M, float)
        return bool(np.all((counts > 0) == (M > 0)))


class SignatureList(list):
    """List of signatures that also counts what was pruned, per rule."""

    def __init__(self, items=(), pruned_counts=None):
        super().__init__(items)
        self.pruned_counts = dict(pruned_counts or {})

    @property
    def n_pruned(self):
        return sum(self.pruned_counts.values())


def prune_reason(sig):
    """Exclusion rule violated by sig under a diagonal interaction, or None."""
    singles = [i for i in range(3) if sig.n_single[i]]
    if len(singles) > 1:
        return "singles of two different types"
    for i in singles:
        for pair, n in zip(PAIRS, sig.n_double):
            if n and i not in pair:
                return f"single of type {i + 1} beside a double without type {i + 1}"
    return None


def _as_masses(M):
    M = np.asarray(M, dtype=float)
    if M.shape != (3,) or not np.all(np.isfinite(M)):
        raise DomainError(f"total masses must be three finite numbers, got {M}")
    if np.any(M < 0) or not np.any(M > 0):
        raise DomainError("total masses must be nonnegative with at least one positive")
    return M


def enumerate_signatures(M, Gamma, count_cap, min_lobes=None, max_lobes=None, prune=None):
    """All signatures whose per-type lobe counts lie in [min_lobes, cap].

    Types with zero total mass get no lobes.  When Gamma is exactly diagonal
    (or ``prune`` is True) signatures breaking the two merge rules are
    dropped; ``.pruned_counts`` tallies them by the rule that excluded them.
    """
    M = _as_masses(M)
    G = GammaMatrix.of(Gamma)
    if int(count_cap) != count_cap or count_cap < 1:
        raise DomainError(f"count_cap must be a positive integer, got {count_cap}")
    prune = G.is_diagonal if prune is None else bool(prune)
    present = M > 0
    cap = np.where(present, int(count_cap), 0)
    if max_lobes is not None:
        cap = np.minimum(cap, np.asarray(max_lobes, dtype=object).astype(float)).astype(int)
        cap = np.where(present, np.maximum(cap, 1), 0)
    lo = np.where(present, 1, 0)
    if min_lobes is not None:
        lo = np.where(present, np.maximum(lo, np.asarray(min_lobes, int)), 0)

    def allowed(lobes):
        return all(present[i] for i in lobes)

    out, pruned = [], {}
    t_max = int(cap.min()) if present.all() else 0
    for nt in range(t_max + 1):
        used = np.array([nt, nt, nt])
        d_ranges = []
        for pair in PAIRS:
            if allowed(pair):
                d_ranges.append(range(int(min(cap[pair[0]] - used[pair[0]],
                                              cap[pair[1]] - used[pair[1]])) + 1))
            else:
                d_ranges.append(range(1))
        for nd in itertools.product(*d_ranges):
            lobes = used.copy()
            for pair, n in zip(PAIRS, nd):
                lobes[list(pair)] += n
            if np.any(lobes > cap):
                continue
            s_ranges = []
            for i in range(3):
                lo_i = max(0, lo[i] - lobes[i])
                s_ranges.append(range(lo_i, cap[i] - lobes[i] + 1) if present[i] else range(1))
            if not prune:
                for ns in itertools.product(*s_ranges):
                    if nt + sum(nd) + sum(ns) > 0:
                        out.append(Signature(nt, nd, ns))
                continue
            # Only single counts with at most one nonzero type, and that type
            # present in every double, survive the rules; count the rest.
            lacking = {i for pair, n in zip(PAIRS, nd) if n for i in range(3) if i not in pair}
            total = math.prod(len(r) for r in s_ranges)
            accounted = 0
            zero_ok = all(0 in r for r in s_ranges)
            if zero_ok and nt + sum(nd) > 0:
                out.append(Signature(nt, nd, (0, 0, 0)))
                accounted += 1
            elif zero_ok:
                total -= 1  # the empty signature is not a configuration
            for i in range(3):
                if not all(0 in s_ranges[j] for j in range(3) if j != i):
                    continue
                values = [v for v in s_ranges[i] if v > 0]
                if i in lacking and values:
                    key = f"single of type {i + 1} beside a double without type {i + 1}"
                    pruned[key] = pruned.get(key, 0) + len(values)
                    accounted += len(values)
                    continue
                for v in values:
                    ns = [0, 0, 0]
                    ns[i] = v
                    out.append(Signature(nt, nd, tuple(ns)))
                accounted += len(values)
            if total > accounted:
                key = "singles of two different types"
                pruned[key] = pruned.get(key, 0) + total - accounted
    out.sort(key=lambda s: (s.n_bubbles, s))
    return SignatureList(out, pruned)


# ----------------------------------------------------------------------------
# bounds


@dataclass
class BoundsReport:
    """Lobe-mass bounds and derived counts.

    m_plus is the maximal-mass bound 8 pi / Gamma_ii^(2/3).  m_minus is the
    minimal-mass certificate computed with the comparability constants c1, c2
    (c1 r^2 <= m <= c2 r^2), the lobe isoperimetric constant C1 = 2 sqrt(pi)
    and C2 = C1 sqrt(c1) (which is 2 pi when c1 = pi).  count_upper is
    ceil(M_i / m_i^-); count_lower is ceil(M_i / m_i^+) and is only reported
    as rigorous when the off-diagonal row of Gamma is nonnegative.
    lagrange_estimate bounds the multipliers from above.
    """

    m_plus: np.ndarray
    m_minus: np.ndarray
    count_upper: tuple
    count_lower: tuple
    lagrange_estimate: np.ndarray
    energy_upper: float
    constants: dict = field(default_factory=dict)

    def to_record(self):
        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in a]

        return {
            "m_plus": clean(self.m_plus),
            "m_minus": clean(self.m_minus),
            "count_upper": [int(c) for c in self.count_upper],
            "count_lower": [int(c) for c in self.count_lower],
            "lagrange_estimate": clean(self.lagrange_estimate),
            "energy_upper": float(self.energy_upper),
            "constants": {k: float(v) for k, v in self.constants.items()},
        }


def mass_upper_bound(Gamma):
    """m_i^+ = 8 pi / Gamma_ii^(2/3); +inf when Gamma_ii = 0."""
    d = np.diag(GammaMatrix.of(Gamma).values)
    with np.errstate(divide="ignore"):
        return np.where(d > 0, 8.0 * math.pi / np.cbrt(d) ** 2, np.inf)


def mass_lower_bound(M, Gamma, energy_upper, c1, c2, C2):
    """Minimal-mass certificate

        m_i^- = c1 min{ [(1/pi) sum_j Gamma_ij M_j]^-2, [C2 M_i / (4 c2 E)]^2 }

    with E an upper bound for the optimal energy.  Types with M_i = 0 get NaN.
    """
    M = np.asarray(M, float)
    G = GammaMatrix.of(Gamma).values
    for name, v in (("c1", c1), ("c2", c2), ("C2", C2), ("energy_upper", energy_upper)):
        if not v > 0:
            raise DomainError(f"{name} must be positive, got {v}")
    out = np.full(3, np.nan)
    for i in range(3):
        if M[i] <= 0:
            continue
        s = G[i] @ M / math.pi
        first = s ** -2 if s > 0 else np.inf
        second = (C2 * M[i] / (4.0 * c2 * energy_upper)) ** 2
        out[i] = c1 * min(first, second)
    return out


def _sample_grid():
    vals = (1e-2, 1e-1, 1.0, 1e1, 1e2)
    grid = [(a, b, c) for a in vals for b in vals for c in vals]
    grid += [(a, b, 0.0) for a in vals for b in vals]
    grid += [(1.0, 0.0, 0.0)]
    return grid


@lru_cache(maxsize=1)
def default_comparability():
    """Comparability constants over log-spaced masses in [1e-2, 1e2]^3 plus
    doubles and a single (cached; depends on nothing but the solver)."""
    return geometry.comparability_constants(_sample_grid())


def singles_upper_energy(M, Gamma):
    """Energy of the best all-singles configuration: a feasible competitor,
    hence an upper bound for the optimum."""
    M = np.asarray(M, float)
    d = np.diag(GammaMatrix.of(Gamma).values)
    total = []
    for i in range(3):
        if M[i] <= 0:
            continue
        if d[i] > 0:
            # f(n) is convex in n; scan past its continuous minimizer
            n_star = M[i] / ((4.0 * math.pi ** 1.5 / d[i]) ** (2.0 / 3.0))
            ns = range(1, int(n_star) + 3)
        else:
            ns = (1,)
        total.append(min(2.0 * math.sqrt(math.pi * M[i] * n) + d[i] * M[i] ** 2 / (4.0 * math.pi * n)
                         for n in ns))
    return math.fsum(total)


def bounds_report(M, Gamma, energy_upper=None, constants=None):
    M = _as_masses(M)
    G = GammaMatrix.of(Gamma)
    c1, c2 = constants if constants is not None else default_comparability()
    C1 = ISO_CONSTANT
    C2 = C1 * math.sqrt(c1)
    if energy_upper is None:
        energy_upper = singles_upper_energy(M, G)
    mp = mass_upper_bound(G)
    mm = mass_lower_bound(M, G, energy_upper, c1, c2, C2)
    upper, lower = [], []
    for i in range(3):
        if M[i] <= 0:
            upper.append(0)
            lower.append(0)
            continue
        upper.append(max(1, math.ceil(M[i] / mm[i])))
        row = np.delete(G.values[i], i)
        if np.isfinite(mp[i]) and np.all(row >= 0):
            lower.append(max(1, math.ceil(M[i] / mp[i] - 1e-12)))
        else:
            lower.append(1)
    Gp = np.maximum(G.values, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        lag = Gp @ M / _TWO_PI + np.sqrt(c2 / mm)
    return BoundsReport(mp, mm, tuple(upper), tuple(lower), lag, float(energy_upper),
                        {"c1": c1, "c2": c2, "C1": C1, "C2": C2})


# ----------------------------------------------------------------------------
# continuous solver for a fixed signature


def _simplex_projection(z, total):
    """Euclidean projection of z onto {y >= 0, sum y = total}."""
    if z.size == 1:
        return np.array([total])
    u = np.sort(z)[::-1]
    css = np.cumsum(u) - total
    k = np.arange(1, z.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(z - theta, 0.0)


class _MassProblem:
    """Sum of weighted e0 over bubble groups.

    Each group is a bubble kind with a multiplicity w; its variables are the
    per-type mass totals of the group, so each of its w bubbles carries y/w.
    """

    def __init__(self, groups, M, Gamma):
        self.groups = [(tuple(lobes), int(w)) for lobes, w in groups]
        self.M = np.asarray(M, float)
        self.G = GammaMatrix.of(Gamma).values
        self.var_group, self.var_type = [], []
        self.slices = []
        for g, (lobes, _) in enumerate(self.groups):
            start = len(self.var_type)
            for i in lobes:
                self.var_group.append(g)
                self.var_type.append(i)
            self.slices.append(slice(start, len(self.var_type)))
        self.var_group = np.array(self.var_group)
        self.var_type = np.array(self.var_type)
        self.n = len(self.var_type)
        self.geoms = [None] * len(self.groups)
        self.types = [i for i in range(3) if self.M[i] > 0]

    def equal_split(self):
        y = np.zeros(self.n)
        counts = np.zeros(3)
        for lobes, w in self.groups:
            counts[list(lobes)] += w
        for v in range(self.n):
            g, i = self.var_group[v], self.var_type[v]
            y[v] = self.groups[g][1] * self.M[i] / counts[i]
        return y

    def group_masses(self, y, g):
        m = np.zeros(3)
        w = self.groups[g][1]
        sl = self.slices[g]
        m[self.var_type[sl]] = y[sl] / w
        return m

    def evaluate(self, y):
        parts = []
        grad = np.full(self.n, np.nan)
        for g, (lobes, w) in enumerate(self.groups):
            m = self.group_masses(y, g)
            if m.max() <= 0:
                continue
            geom = geometry.solve(m, guess=self.geoms[g])
            if geom.solver_state is not None:
                self.geoms[g] = geom
            parts.append(w * (geom.perimeter + m @ self.G @ m / (4.0 * math.pi)))
            lin = self.G @ m / _TWO_PI
            sl = self.slices[g]
            for v in range(sl.start, sl.stop):
                i = self.var_type[v]
                if y[v] > 0:
                    k = geom.curvatures[i]
                    grad[v] = lin[i] + (k if np.isfinite(k) else np.inf)
        return math.fsum(parts), grad

    def hessian(self, y):
        H = np.zeros((self.n, self.n))
        for g, (lobes, w) in enumerate(self.groups):
            m = self.group_masses(y, g)
            if m.max() <= 0:
                continue
            sl = self.slices[g]
            idx = [v for v in range(sl.start, sl.stop) if y[v] > 0]
            Hg = e0_hessian(m, self.G, geom=self._geom_for(m, g))
            H[np.ix_(idx, idx)] = Hg / w
        return H

    def _geom_for(self, m, g):
        geom = geometry.solve(m, guess=self.geoms[g])
        if geom.solver_state is not None:
            self.geoms[g] = geom
        return geom

    def spread(self, grad, y):
        worst = 0.0
        for i in self.types:
            sel = (self.var_type == i) & (y > 0)
            if sel.sum() > 1:
                worst = max(worst, float(np.ptp(grad[sel])))
        return worst

    def project(self, z, active):
        y = np.zeros(self.n)
        for i in self.types:
            sel = np.nonzero((self.var_type == i) & active)[0]
            y[sel] = _simplex_projection(z[sel], self.M[i])
        return y

    def snap(self, y):
        """Drop negligible lobes and move their mass to the heaviest lobe of
        the same type, so the totals stay exact."""
        y = y.copy()
        for i in self.types:
            sel = np.nonzero(self.var_type == i)[0]
            small = sel[(y[sel] > 0) & (y[sel] < SNAP_RATIO * self.M[i])]
            if small.size:
                big = sel[np.argmax(y[sel])]
                y[big] += y[small].sum()
                y[small] = 0.0
        return y

    def fix_totals(self, y):
        y = y.copy()
        for i in self.types:
            sel = np.nonzero(self.var_type == i)[0]
            big = sel[np.argmax(y[sel])]
            rest = math.fsum(y[v] for v in sel if v != big)
            y[big] = self.M[i] - rest
        return y

    def expand(self, y):
        bubbles = []
        for g, (lobes, w) in enumerate(self.groups):
            m = self.group_masses(y, g)
            if m.max() > 0:
                bubbles.extend([tuple(m)] * w)
        return bubbles


def _type_scaling(prob):
    """Per-variable step weights (typical lobe mass)^(3/2) of the variable's
    type, normalized to max 1.  The curvature of e0 in a lobe mass m goes
    like m^(-3/2), so this evens out types of very different sizes; being
    constant within a type it keeps the simplex projection Euclidean."""
    counts = np.zeros(3)
    for lobes, w in prob.groups:
        counts[list(lobes)] += w
    typical = np.where(counts > 0, prob.M / np.maximum(counts, 1), 0.0)
    D = typical[prob.var_type] ** 1.5
    return D / D.max()


def _projected_gradient(prob, y, tol, maxiter):
    y = prob.snap(y)
    F, g = prob.evaluate(y)
    scale = max(prob.M[i] for i in prob.types)
    D = _type_scaling(prob)
    step = None
    for _ in range(maxiter):
        active = y > 0
        bad = active & ~np.isfinite(g)
        if bad.any():
            y = prob.snap(np.where(bad, 0.0, y) + 0.0)
            y = prob.fix_totals(y)
            F, g = prob.evaluate(y)
            continue
        if prob.spread(g, y) < tol:
            break
        if step is None:
            Dg = D[active] * g[active]
            dev = max(np.max(np.abs(Dg - np.mean(Dg))), 1e-300)
            step = 0.05 * scale / dev
        accepted = False
        while step * np.max(np.abs(D[active] * g[active])) > 1e-16 * scale:
            z = np.where(active, y - step * D * np.where(active, g, 0.0), 0.0)
            yn = prob.snap(prob.project(z, active))
            d = yn - y
            if not np.any(d):
                break
            Fn, gn = prob.evaluate(yn)
            if Fn <= F + 1e-4 * np.dot(g[active], d[active]) or Fn < F - 1e-15 * abs(F):
                both = (yn > 0) & active & np.isfinite(gn)
                s, dg = d[both], (gn - g)[both]
                sy = float(s @ dg)
                # Barzilai-Borwein step in the metric weighted by 1/D
                step = float(s @ (s / D[both])) / sy if sy > 0 else 2.0 * step
                y, F, g = yn, Fn, gn
                accepted = True
                break
            step *= 0.3
        if not accepted:
            break
    return y, F, g


def _kkt_system(prob, y, g):
    act = np.nonzero(y > 0)[0]
    types = sorted({int(prob.var_type[v]) for v in act})
    E = np.zeros((act.size, len(types)))
    for r, v in enumerate(act):
        E[r, types.index(prob.var_type[v])] = 1.0
    return act, types, E


def _newton_polish(prob, y, F, g, tol=KKT_TOL, maxiter=25):
    """Newton iteration on the active-set KKT system.  Stops on
    convergence, when a lobe wants to leave the active set, or when the step
    stops improving the stationarity residual."""
    spread = prob.spread(g, y)
    H_red = None
    for _ in range(maxiter):
        if spread < tol:
            break
        act, types, E = _kkt_system(prob, y, g)
        H = prob.hessian(y)[np.ix_(act, act)]
        n, t = act.size, len(types)
        K = np.zeros((n + t, n + t))
        K[:n, :n] = H
        K[:n, n:] = E
        K[n:, :n] = E.T
        rhs = np.concatenate([-g[act], np.zeros(t)])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        dy = sol[:n]
        ya = y[act]
        neg = dy < 0
        t_max = np.min(-ya[neg] / dy[neg]) if neg.any() else np.inf
        if t_max <= 1.0:
            break  # a lobe is headed for zero; leave it to the gradient phase
        yn = y.copy()
        yn[act] = ya + dy
        yn = prob.fix_totals(yn)
        Fn, gn = prob.evaluate(yn)
        sn = prob.spread(gn, yn)
        if not (sn < spread and Fn <= F + 1e-12 * max(1.0, abs(F))):
            break
        y, F, g, spread = yn, Fn, gn, sn
        H_red = (H, E)
    return y, F, g, spread, H_red


def _tangent_min_eig(H, E):
    """Smallest eigenvalue of H restricted to {E^T d = 0} and its vector."""
    Q, _ = np.linalg.qr(E, mode="complete")
    Z = Q[:, E.shape[1]:]
    if Z.shape[1] == 0:
        return np.inf, None
    w, V = np.linalg.eigh(Z.T @ H @ Z)
    return w[0], Z @ V[:, 0]


@dataclass
class MassSolution:
    signature: Signature
    configuration: Configuration
    energy: float
    spread: float
    multipliers: np.ndarray
    converged: bool


def _solve_problem(prob, y0, tol=KKT_TOL, pg_tol=1e-6):
    y = prob.fix_totals(prob.snap(y0))
    if tol >= 1e-7:
        # screening accuracy: the energy error is second order in the spread
        y, F, g = _projected_gradient(prob, y, tol, maxiter=400)
        return y, F, g, prob.spread(g, y)
    for _ in range(4):
        y, F, g = _projected_gradient(prob, y, pg_tol, maxiter=400)
        y, F, g, spread, H_red = _newton_polish(prob, y, F, g, tol=tol)
        if spread < tol:
            break
        pg_tol = max(spread * 1e-2, 1e-13)
    else:
        spread = prob.spread(g, y)
    # escape saddle points of the symmetric class along negative curvature
    act = np.nonzero(y > 0)[0]
    if spread < 1e-6 and act.size > len(prob.types):
        act, types, E = _kkt_system(prob, y, g)
        H = prob.hessian(y)[np.ix_(act, act)]
        lam, vec = _tangent_min_eig(H, E)
        if lam < -1e-8 * max(1.0, np.abs(H).max()):
            best = None
            for sgn in (1.0, -1.0):
                yt = y.copy()
                room = np.min(y[act][vec * sgn < 0] / np.abs(vec[vec * sgn < 0])) if np.any(vec * sgn < 0) else 1.0
                yt[act] += sgn * 0.5 * room * vec
                yt = prob.fix_totals(yt)
                Ft, _ = prob.evaluate(yt)
                if Ft < F and (best is None or Ft < best[1]):
                    best = (yt, Ft)
            if best is not None:
                return _solve_problem(prob, best[0], tol, pg_tol)
    return y, F, g, spread


def _multipliers(prob, y, g):
    lam = np.full(3, np.nan)
    for i in prob.types:
        sel = (prob.var_type == i) & (y > 0)
        lam[i] = float(np.mean(g[sel]))
    return lam


def _finalize_bubbles(bubbles, M):
    """Make type totals exact after expanding group variables."""
    arr = np.array(bubbles, float).reshape(-1, 3)
    for i in range(3):
        col = arr[:, i]
        if M[i] > 0:
            big = int(np.argmax(col))
            col[big] = M[i] - math.fsum(col[np.arange(col.size) != big])
    return Configuration(tuple(tuple(r) for r in arr if r.max() > 0))


def _check_feasible(sig, M):
    if not sig.is_feasible(M):
        raise DomainError(f"signature {sig.label} does not match the positive types of M={M.tolist()}")


def solve_signature(sig, M, Gamma, y0=None, symmetric=False, tol=KKT_TOL):
    """Local solve for one signature from one start.

    With ``symmetric`` the bubbles of each kind are forced equal (reduced
    problem); otherwise every bubble has its own masses.
    """
    M = _as_masses(M)
    _check_feasible(sig, M)
    if symmetric:
        groups = sig.groups()
    else:
        groups = [(lobes, 1) for lobes, n in sig.groups() for _ in range(n)]
    prob = _MassProblem(groups, M, Gamma)
    y = prob.equal_split() if y0 is None else np.asarray(y0, float)
    y, F, g, spread = _solve_problem(prob, y, tol)
    config = _finalize_bubbles(prob.expand(y), M)
    return MassSolution(Signature.of_configuration(config), config, F, spread,
                        _multipliers(prob, y, g), spread < max(tol, 1e-6)), prob, y


def _start_points(prob, n_starts, seed):
    base = prob.equal_split()
    starts = [base]
    rng = np.random.default_rng(seed)
    for _ in range(n_starts - 1):
        y = base * (1.0 + 0.5 * rng.uniform(-1.0, 1.0, size=base.size))
        starts.append(prob.project(y, np.ones(prob.n, bool)))
    return starts


def _config_key(config):
    return (len(config), sorted(tuple(b) for b in config))


def optimize_masses(sig, M, Gamma, n_starts=8, seed=0, start=None, details=False):
    """Best local minimizer of the summed energy for signature ``sig``.

    Multi-start: the equal split plus ``n_starts - 1`` seeded perturbations
    of it (or of ``start``, a configuration with the same bubble layout).
    Returns the Configuration, or a MassSolution when ``details`` is set.
    """
    M = _as_masses(M)
    G = GammaMatrix.of(Gamma)
    _check_feasible(sig, M)
    groups = [(lobes, 1) for lobes, n in sig.groups() for _ in range(n)]
    prob = _MassProblem(groups, M, G)
    starts = _start_points(prob, n_starts, seed)
    if start is not None:
        starts[0] = _layout_vector(prob, start)
    best = None
    for y0 in starts:
        prob.geoms = [None] * len(prob.groups)
        try:
            y, F, g, spread = _solve_problem(prob, y0)
        except NumericError as exc:
            log.warning("start failed for %s: %s", sig.label, exc)
            continue
        config = _finalize_bubbles(prob.expand(y), M)
        cand = MassSolution(Signature.of_configuration(config), config, F, spread,
                            _multipliers(prob, y, g), spread < 1e-6)
        if best is None or _better(cand, best):
            best = cand
    if best is None:
        raise NumericError(f"every start failed for signature {sig.label}")
    if not best.converged:
        raise NumericError(f"mass optimization for {sig.label} did not reach stationarity",
                           residual=best.spread, best=best.configuration)
    return best if details else best.configuration


def _better(a, b):
    if a.energy < b.energy - TIE_TOL * max(1.0, abs(b.energy)):
        return True
    if a.energy > b.energy + TIE_TOL * max(1.0, abs(b.energy)):
        return False
    return _config_key(a.configuration) < _config_key(b.configuration)


def _layout_vector(prob, config):
    """Group variables matching a configuration bubble by bubble (bubbles
    assigned to groups of the same kind in order)."""
    pool = {}
    for b in config:
        pool.setdefault(b.lobes, []).append(b.values)
    y = np.zeros(prob.n)
    for g, (lobes, w) in enumerate(prob.groups):
        m = pool[lobes].pop(0)
        sl = prob.slices[g]
        y[sl] = m[prob.var_type[sl]] * w
    return y


# ----------------------------------------------------------------------------
# diagnostics and moves


def multipliers_and_spread(config, Gamma):
    G = GammaMatrix.of(Gamma).values
    grads = [[] for _ in range(3)]
    for b in config:
        geom = geometry.solve(b)
        lin = G @ b.values / _TWO_PI
        for i in b.lobes:
            grads[i].append(lin[i] + geom.curvatures[i])
    lam = np.array([np.mean(v) if v else np.nan for v in grads])
    spread = np.array([np.ptp(v) if v else 0.0 for v in grads])
    return lam, spread


def kkt_residual(config, Gamma):
    """Per-type spread (max - min) of the stationarity quantity
    (1/2pi) sum_j Gamma_ij m_j + 1/r_i over bubbles carrying a type-i lobe."""
    return multipliers_and_spread(config, Gamma)[1]


def _moves(config):
    """Candidate replacements: (removed bubble indices, added bubbles, name)."""
    bubbles = [b.values for b in config]
    for k, m in enumerate(bubbles):
        for i in np.nonzero(m > 0)[0]:
            half = m.copy()
            half[i] *= 0.5
            single = np.zeros(3)
            single[i] = 0.5 * m[i]
            yield (k,), [half, single], f"split lobe {i + 1} of bubble {k}"
    for k, h in itertools.combinations(range(len(bubbles)), 2):
        a, b = bubbles[k], bubbles[h]
        if not np.any((a > 0) & (b > 0)):
            yield (k, h), [a + b], f"merge bubbles {k} and {h}"
        for i in np.nonzero((a > 0) & (b > 0))[0]:
            for src, dst in ((h, k), (k, h)):
                s, d = bubbles[src].copy(), bubbles[dst].copy()
                d[i] += s[i]
                s[i] = 0.0
                yield (k, h), [d, s] if s.max() > 0 else [d], f"move lobe {i + 1} of {src} into {dst}"
            ra, rb = a.copy(), b.copy()
            ra[i] = rb[i] = 0.0
            pooled = np.zeros(3)
            pooled[i] = a[i] + b[i]
            yield (k, h), [x for x in (ra, rb) if x.max() > 0] + [pooled], f"pool lobes {i + 1} of {k},{h}"


def merge_split_moves(config, Gamma, tol=1e-9, return_move=False):
    """Try the split and merge comparison moves; return the configuration
    after the most improving move, or None if no move lowers the energy by
    more than tol (relative to max(1, |E|))."""
    G = GammaMatrix.of(Gamma)
    config = Configuration(tuple(config))
    base = [e0(b, G) for b in config]
    total = math.fsum(base)
    best = None
    for removed, added, name in _moves(config):
        delta = math.fsum([e0(m, G) for m in added] + [-base[k] for k in removed])
        if delta < -tol * max(1.0, abs(total)) and (best is None or delta < best[0]):
            best = (delta, removed, added, name)
    if best is None:
        return (None, None) if return_move else None
    delta, removed, added, name = best
    kept = [b for k, b in enumerate(config) if k not in removed]
    new = Configuration(tuple(kept) + tuple(tuple(m) for m in added))
    return (new, name) if return_move else new


# ----------------------------------------------------------------------------
# global search


@dataclass
class PartitionResult:
    """Outcome of minimize_e0bar; unpacks as (configuration, bounds)."""

    configuration: Configuration
    bounds: BoundsReport
    energy: float
    multipliers: np.ndarray
    spread: np.ndarray
    signature: Signature
    cap: tuple
    cap_saturated: bool
    ties: list = field(default_factory=list)
    screened: list = field(default_factory=list)
    n_pruned: int = 0

    def __iter__(self):
        return iter((self.configuration, self.bounds))


def _screen(signatures, M, G, cache, tol=SCREEN_TOL):
    for sig in signatures:
        if sig in cache:
            continue
        try:
            sol, _, _ = solve_signature(sig, M, G, symmetric=True, tol=tol)
            cache[sig] = sol
        except NumericError as exc:
            log.warning("screening failed for %s: %s", sig.label, exc)
            cache[sig] = None


def _saturates(config, caps, M):
    counts = config.lobe_counts()
    return any(M[i] > 0 and counts[i] >= caps[i] for i in range(3))


def minimize_e0bar(M, Gamma, count_cap=None, seed=0, n_starts=8, refine=4, refine_rel=1e-3):
    """Minimize the summed droplet energy over all configurations.

    Every signature with per-type lobe counts between the maximal-mass lower
    count and the cap is screened with a symmetric (equal bubbles per kind)
    solve; the best few are refined with the full multi-start solve, then
    checked against the split/merge moves.  With ``count_cap=None`` the cap
    starts just above the lower counts and grows while the best
    configuration saturates it, up to HARD_CAP.
    """
    M = _as_masses(M)
    G = GammaMatrix.of(Gamma)
    bounds = bounds_report(M, G)
    lower = np.array(bounds.count_lower)
    upper = np.minimum(np.array(bounds.count_upper, dtype=float), HARD_CAP).astype(int)
    if count_cap is not None:
        if int(count_cap) != count_cap or count_cap < 1:
            raise DomainError(f"count_cap must be a positive integer, got {count_cap}")
        cap = int(count_cap)
        adaptive = False
    else:
        cap = min(HARD_CAP, int(lower.max()) + 2)
        adaptive = True
    cache = {}
    n_pruned = 0
    while True:
        sigs = enumerate_signatures(M, G, cap, min_lobes=np.minimum(lower, cap),
                                    max_lobes=np.maximum(np.minimum(upper, cap), 1))
        n_pruned = sigs.n_pruned
        _screen(sigs, M, G, cache)
        ranked = sorted(((cache[s].energy, s) for s in sigs if cache[s] is not None),
                        key=lambda t: (t[0], t[1].n_bubbles, t[1]))
        if not ranked:
            raise NumericError("no signature could be solved")
        caps = np.where(M > 0, np.minimum(cap, np.maximum(upper, 1)), 0)
        best_cfg = cache[ranked[0][1]].configuration
        if adaptive and _saturates(best_cfg, caps, M) and cap < HARD_CAP:
            cap += 1
            continue
        break

    top = ranked[0][0]
    chosen = [s for E, s in ranked if E <= top + refine_rel * max(1.0, abs(top))][:refine]
    results = []
    for sig in chosen:
        screened = cache[sig]
        sol = optimize_masses(screened.signature, M, G, n_starts=n_starts, seed=seed,
                              start=screened.configuration, details=True)
        results.append(sol)
    best = min(results, key=lambda s: (s.energy, _config_key(s.configuration)))
    for s in results:
        if _better(s, best):
            best = s

    # post-check with the comparison moves
    for _ in range(10):
        moved = merge_split_moves(best.configuration, G)
        if moved is None:
            break
        sig = Signature.of_configuration(moved)
        sol = optimize_masses(sig, M, G, n_starts=n_starts, seed=seed, start=moved, details=True)
        results.append(sol)
        if _better(sol, best):
            best = sol
        else:
            break

    ties = []
    for s in results:
        if s is not best and abs(s.energy - best.energy) <= TIE_TOL * max(1.0, abs(best.energy)):
            if _config_key(s.configuration) != _config_key(best.configuration):
                ties.append(s.configuration.canonical())
    config = best.configuration.canonical()
    energy = configuration_energy(config, G)
    lam, spread = multipliers_and_spread(config, G)
    bounds = bounds_report(M, G, energy_upper=min(energy, bounds.energy_upper))
    caps = np.where(M > 0, np.minimum(cap, np.maximum(upper, 1)), 0)
    saturated = _saturates(config, caps, M)
    if saturated:
        log.warning("best configuration saturates the lobe cap %s", tuple(caps))
    return PartitionResult(config, bounds, energy, lam, spread, Signature.of_configuration(config),
                           tuple(int(c) for c in caps), saturated, ties,
                           [(s.label, cache[s].energy if cache[s] else None) for s in sigs], n_pruned)


# ----------------------------------------------------------------------------
# coexistence parameters

# Self-repulsion of types 2 and 3 relative to type 1.  Their lobes are then
# small beside the type-1 lobes, so each triple is close to a type-1 single
# and the number of triples stays near the type-1 single count.
COEXIST_RATIO = 512.0
# Lobe masses at the coexistence optimum in units of the single-lobe optimum
# (4 pi^(3/2) / Gamma_ii)^(2/3) of the same type: type 2 and 3 lobes of a
# triple, of a {2,3} double, and a type-3 single.  Measured once on the
# (2,2,2) instance; the optimizer run is what certifies the counts.
COEXIST_LOBES = {"triple": (0.94, 1.17), "double": (0.76, 1.02), "single": 0.96}
COEXIST_TYPE1 = 0.91  # type-1 lobe of a triple, same units
COEXIST_MARGIN = 0.3


def single_optimum(gamma_ii):
    """Mass minimizing the energy per unit mass of one single bubble."""
    return (4.0 * math.pi ** 1.5 / gamma_ii) ** (2.0 / 3.0)


def coexistence_params(N1, N2, N3, ratio=COEXIST_RATIO, margin=COEXIST_MARGIN):
    """Masses and a diagonal Gamma meant to produce at least N1 triples,
    N2 doubles of types {2,3} and N3 singles of type 3.

    Gamma = diag(1, ratio, ratio).  M1 is the smallest multiple n_T of the
    calibrated type-1 lobe of a triple with M1 / m1^+ > N1, so n_T triples
    are expected.
    M2 and M3 supply the type-2/3 lobes of those triples plus N2 doubles and
    N3 singles (each padded by ``margin`` of a lobe).

    Returns (M, Gamma, certificate).  The certificate holds the construction
    inequality, the counting cascade evaluated with the rigorous m^+ and m^-
    (each flagged), and whether M1 <= M2 <= M3.
    """
    counts = []
    for name, v in (("N1", N1), ("N2", N2), ("N3", N3)):
        if int(v) != v or v < 1:
            raise DomainError(f"{name} must be a positive integer, got {v}")
        counts.append(int(v))
    N1, N2, N3 = counts
    if not ratio > 0:
        raise DomainError("ratio must be positive")
    G = GammaMatrix.diagonal(1.0, float(ratio), float(ratio))
    m_plus = mass_upper_bound(G)
    s1 = single_optimum(1.0)
    s23 = single_optimum(float(ratio))
    lobe1 = COEXIST_TYPE1 * s1
    n_triples = math.floor(N1 * m_plus[0] / lobe1) + 1
    M1 = n_triples * lobe1
    t2, t3 = COEXIST_LOBES["triple"]
    d2, d3 = COEXIST_LOBES["double"]
    sg = COEXIST_LOBES["single"]
    M2 = s23 * (n_triples * t2 + d2 * (N2 + margin))
    M3 = s23 * (n_triples * t3 + d3 * N2 + sg * (N3 + margin))
    M = np.array([M1, M2, M3])

    bounds = bounds_report(M, G)
    m_minus = bounds.m_minus
    in_triples = M1 / m_minus[0]  # most type-1 lobes, hence most triples
    doubles_max = max(0.0, (M2 - m_plus[1] * in_triples) / m_minus[1])
    lhs = [float(M1 / m_plus[0]), float(M2 / m_plus[1]), float(M3 / m_plus[2])]
    rhs = [N1, float(N2 + in_triples), float(N3 + in_triples + doubles_max)]
    certificate = {
        "construction": {
            "inequality": "M1/m1+ > N1",
            "lhs": lhs[0], "rhs": N1, "holds": bool(lhs[0] > N1),
        },
        "cascade": [
            {"inequality": "M1/m1+ > N1", "lhs": lhs[0], "rhs": rhs[0], "holds": bool(lhs[0] > rhs[0])},
            {"inequality": "M2/m2+ > N2 + M1/m1-", "lhs": lhs[1], "rhs": rhs[1],
             "holds": bool(lhs[1] > rhs[1])},
            {"inequality": "M3/m3+ > N3 + M1/m1- + max(0, M2 - m2+ M1/m1-)/m2-",
             "lhs": lhs[2], "rhs": rhs[2], "holds": bool(lhs[2] > rhs[2])},
        ],
        "ordered_masses": bool(M1 <= M2 <= M3),
        "m_plus": [float(v) for v in m_plus],
        "m_minus": [float(v) for v in m_minus],
        "energy_upper": bounds.energy_upper,
        "design": {
            "triples": n_triples, "doubles_23": N2, "singles_3": N3,
            "ratio": float(ratio), "margin": float(margin),
            "single_optimum": [s1, s23, s23],
        },
    }
    return M, G, certificate


def coexistence_counts(config):
    """(triples, {2,3} doubles, type-3 singles) of a configuration."""
    sig = Signature.of_configuration(config)
    return sig.n_triple, sig.n_double[2], sig.n_single[2]


# ----------------------------------------------------------------------------
# independent oracle


def _compositions(n, parts):
    """Ordered tuples of `parts` positive integers summing to n."""
    if parts == 0:
        if n == 0:
            yield ()
        return
    for cut in itertools.combinations(range(1, n), parts - 1):
        edges = (0,) + cut + (n,)
        yield tuple(edges[k + 1] - edges[k] for k in range(parts))


def _layouts(M, max_bubbles):
    """Every signature with at most max_bubbles bubbles (no pruning)."""
    present = M > 0
    kinds = [((0, 1, 2),)] if present.all() else []
    kinds = [k for k in [(0, 1, 2)] + list(PAIRS) + [(0,), (1,), (2,)]
             if all(present[i] for i in k)]
    out = []
    for n in range(1, max_bubbles + 1):
        for combo in itertools.combinations_with_replacement(kinds, n):
            lobes = np.zeros(3, int)
            for k in combo:
                lobes[list(k)] += 1
            if np.all((lobes > 0) == present):
                out.append(combo)
    return out


def brute_force_oracle(M, Gamma, max_bubbles=3, grid_step=None, budget=200_000, details=False):
    """Exhaustive lattice search over every signature with at most
    ``max_bubbles`` bubbles, followed by a bound-constrained SLSQP polish of
    the best lattice point of each signature.

    Masses of type i are multiples of M_i / N_i with N_i = round(M_i /
    grid_step) (default grid_step = max(M) / 12).  Refuses with AccuracyError
    style DomainError if the number of lattice points exceeds ``budget``.
    """
    M = _as_masses(M)
    G = GammaMatrix.of(Gamma)
    if not 1 <= max_bubbles <= 3:
        raise DomainError("max_bubbles must be 1, 2 or 3")
    step = float(grid_step) if grid_step is not None else M.max() / 12.0
    if not step > 0:
        raise DomainError("grid_step must be positive")
    N = np.where(M > 0, np.maximum(1, np.rint(M / step)).astype(int), 0)
    layouts = _layouts(M, max_bubbles)

    def count_points(layout):
        total = 1
        for i in range(3):
            parts = sum(1 for k in layout if i in k)
            if parts:
                total *= math.comb(N[i] - 1, parts - 1) if N[i] >= parts else 0
        return total

    n_points = sum(count_points(l) for l in layouts)
    if n_points > budget:
        raise DomainError(f"oracle lattice has {n_points} points, above the budget {budget}")

    table = {}

    def lattice_e0(kind, idx):
        key = (kind, idx)
        if key not in table:
            m = np.zeros(3)
            for i, n in zip(kind, idx):
                m[i] = n * M[i] / N[i]
            table[key] = e0(m, G)
        return table[key]

    best_per_layout = []
    for layout in layouts:
        slots = {i: [b for b, k in enumerate(layout) if i in k] for i in range(3)}
        per_type = []
        for i in range(3):
            if slots[i]:
                per_type.append(list(_compositions(int(N[i]), len(slots[i]))))
            else:
                per_type.append([()])
        best = None
        for combo in itertools.product(*per_type):
            idx = [dict() for _ in layout]
            for i in range(3):
                for b, n in zip(slots[i], combo[i]):
                    idx[b][i] = n
            E = math.fsum(lattice_e0(k, tuple(idx[b][i] for i in k)) for b, k in enumerate(layout))
            if best is None or E < best[0]:
                best = (E, idx)
        if best is not None:
            best_per_layout.append((layout, best))

    results = []
    for layout, (E_grid, idx) in best_per_layout:
        x0, pos = [], []
        for b, k in enumerate(layout):
            for i in k:
                x0.append(idx[b][i] * M[i] / N[i])
                pos.append((b, i))
        x0 = np.array(x0)
        config, E = _slsqp_polish(layout, pos, x0, M, G)
        if E > E_grid:
            m_grid = np.zeros((len(layout), 3))
            for (b, i), v in zip(pos, x0):
                m_grid[b, i] = v
            config, E = Configuration(tuple(map(tuple, m_grid))), E_grid
        results.append((E, config))
    results.sort(key=lambda t: (t[0], _config_key(t[1])))
    E, config = results[0]
    return (config.canonical(), E, results) if details else config.canonical()


def _slsqp_polish(layout, pos, x0, M, G):
    """Local polish of one layout with scipy's SLSQP (independent of the
    projected-gradient/Newton path used by optimize_masses)."""
    nb = len(layout)
    lower = np.array([1e-9 * M[i] for _, i in pos])
    upper = np.array([M[i] for _, i in pos])
    guesses = [None] * nb

    def unpack(x):
        m = np.zeros((nb, 3))
        for (b, i), v in zip(pos, x):
            m[b, i] = max(v, 0.0)
        return m

    def fun(x):
        m = unpack(x)
        total, grad = [], np.zeros_like(x)
        for b in range(nb):
            geom = geometry.solve(m[b], guess=guesses[b])
            if geom.solver_state is not None:
                guesses[b] = geom
            total.append(geom.perimeter + m[b] @ G.values @ m[b] / (4.0 * math.pi))
            lin = G.values @ m[b] / _TWO_PI
            for v, (bb, i) in enumerate(pos):
                if bb == b:
                    grad[v] = lin[i] + geom.curvatures[i]
        return math.fsum(total), grad

    cons = []
    for i in range(3):
        sel = [v for v, (_, t) in enumerate(pos) if t == i]
        if sel:
            cons.append({"type": "eq",
                         "fun": lambda x, sel=sel, i=i: np.array([x[sel].sum() - M[i]]),
                         "jac": lambda x, sel=sel: np.array([[1.0 if v in sel else 0.0 for v in range(x.size)]])})
    x0 = np.clip(x0, lower, upper)
    try:
        with warnings.catch_warnings():
            # SLSQP clips its trial points to the bounds and says so
            warnings.simplefilter("ignore", RuntimeWarning)
            res = scipy_minimize(fun, x0, jac=True, method="SLSQP", bounds=list(zip(lower, upper)),
                                 constraints=cons, options={"ftol": 1e-15, "maxiter": 200})
        x = res.x
    except NumericError:
        x = x0
    m = unpack(np.clip(x, lower, upper))
    for i in range(3):
        sel = [v for v, (_, t) in enumerate(pos) if t == i]
        if sel:
            b_big = max(sel, key=lambda v: m[pos[v][0], i])
            b0 = pos[b_big][0]
            m[b0, i] = M[i] - math.fsum(m[pos[v][0], i] for v in sel if v != b_big)
    config = Configuration(tuple(map(tuple, m)))
    return config, configuration_energy(config, G)
