"""Periodic Green's function of the unit flat torus, bubble placement and
the finite-eta energy.

G solves -Laplace G = delta - 1 with zero mean.  It is evaluated with an
Ewald split at heat-kernel time tau,

    G(x) = sum_{k != 0} cos(2 pi k.x) exp(-4 pi^2 |k|^2 tau) / (4 pi^2 |k|^2)
         + (1/4pi) sum_n E1(|x - n|^2 / (4 tau)) - tau,

where the first sum runs over Fourier modes and the second over lattice
images.  Both converge like Gaussians, so a handful of terms give machine
precision.  Near the origin G = -(1/2pi) log|x| + R(x) with R smooth.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import exp1

from . import geometry
from .energy import Configuration, GammaMatrix, configuration_energy
from .errors import AccuracyError, DomainError, NumericError, SingularityError

log = logging.getLogger(__name__)

EULER_GAMMA = 0.5772156649015329
DEFAULT_SPLIT = 1.0 / (4.0 * math.pi)
CHUNK = 4096


def reduce_point(x):
    """Representative of x in [-1/2, 1/2)^2."""
    x = np.asarray(x, dtype=float)
    return x - np.floor(x + 0.5)


def torus_distance(x, y):
    d = reduce_point(np.asarray(x, float) - np.asarray(y, float))
    return np.hypot(d[..., 0], d[..., 1])


def _ein_minus(z):
    """E1(z) + log(z), finite at z = 0 (equals -gamma there)."""
    z = np.asarray(z, float)
    out = np.empty_like(z)
    small = z < 1.0
    zs = z[small]
    # E1(z) + log z = -gamma - sum_{k>=1} (-z)^k / (k k!)
    term = np.ones_like(zs)
    acc = np.zeros_like(zs)
    for k in range(1, 30):
        term = term * (-zs) / k
        acc += term / k
    out[small] = -EULER_GAMMA - acc
    zl = z[~small]
    out[~small] = exp1(zl) + np.log(zl)
    return out


class GreensEvaluator:
    """Ewald evaluator for the torus Green's function.

    ``modes`` and ``images`` are the per-axis truncations of the Fourier and
    lattice sums; by default they are the smallest values whose tail bounds
    fall below ``tol``.  Instances are immutable after construction.
    """

    def __init__(self, tol=1e-12, split=DEFAULT_SPLIT, modes=None, images=None):
        if not split > 0:
            raise DomainError("split parameter must be positive")
        self.split = float(split)
        self.tol = float(tol)
        self.modes = int(modes) if modes is not None else self._pick_modes(tol)
        self.images = int(images) if images is not None else self._pick_images(tol)
        self.truncation_error = self.mode_tail(self.modes) + self.image_tail(self.images)
        K = np.arange(-self.modes, self.modes + 1)
        k1, k2 = np.meshgrid(K, K, indexing="ij")
        k1, k2 = k1.ravel(), k2.ravel()
        # half plane: k and -k contribute the same cosine
        keep = (k1 > 0) | ((k1 == 0) & (k2 > 0))
        self._k = np.stack([k1[keep], k2[keep]], axis=1).astype(float)
        ksq = (self._k ** 2).sum(axis=1)
        self._ck = 2.0 * np.exp(-4.0 * math.pi ** 2 * ksq * self.split) / (4.0 * math.pi ** 2 * ksq)
        N = np.arange(-self.images, self.images + 1)
        n1, n2 = np.meshgrid(N, N, indexing="ij")
        n = np.stack([n1.ravel(), n2.ravel()], axis=1).astype(float)
        self._far = n[np.any(n != 0, axis=1)]
        self._cache = None

    def mode_tail(self, K):
        """Bound for the Fourier terms with max(|k1|, |k2|) > K."""
        tau = self.split
        total = 0.0
        for j in range(K + 1, K + 60):
            # at most 8 j lattice points on the ring |k|_inf = j, each with |k| >= j
            total += 8 * j * math.exp(-4.0 * math.pi ** 2 * j * j * tau) / (4.0 * math.pi ** 2 * j * j)
        return total

    def image_tail(self, P):
        """Bound for the images with max(|n1|, |n2|) > P at |x| <= 1/sqrt(2)."""
        tau = self.split
        total = 0.0
        for j in range(P + 1, P + 60):
            dist = j - 1.0 / math.sqrt(2.0)
            total += 8 * j * float(exp1(dist * dist / (4.0 * tau))) / (4.0 * math.pi)
        return total

    def _pick_modes(self, tol):
        for K in range(1, 65):
            if self.mode_tail(K) < tol:
                return K
        raise AccuracyError(f"Fourier tail above {tol} with 64 modes")

    def _pick_images(self, tol):
        for P in range(1, 65):
            if self.image_tail(P) < tol:
                return P
        raise AccuracyError(f"lattice tail above {tol} with 64 images")

    def check_tol(self, tol):
        if tol < self.truncation_error:
            raise AccuracyError(
                f"requested tolerance {tol:g} is below the truncation error "
                f"{self.truncation_error:.1e} of this evaluator")

    # -- values -------------------------------------------------------------

    def _smooth(self, x):
        """Fourier part plus far images plus constant, at reduced x (..., 2)."""
        flat = x.reshape(-1, 2)
        out = np.empty(len(flat))
        for lo in range(0, len(flat), CHUNK):
            part = flat[lo:lo + CHUNK]
            spec = np.cos(2.0 * math.pi * part @ self._k.T) @ self._ck
            d = part[:, None, :] - self._far[None, :, :]
            z = (d ** 2).sum(axis=2) / (4.0 * self.split)
            # E1(z) < 1e-21 beyond z = 45; skip those images
            live = z < 45.0
            far = np.zeros_like(z)
            far[live] = exp1(z[live])
            out[lo:lo + CHUNK] = spec + far.sum(axis=1) / (4.0 * math.pi) - self.split
        return out.reshape(x.shape[:-1])

    @staticmethod
    def _canonical(x):
        # G is even in each coordinate separately; folding makes G(x) = G(-x) exact
        return np.abs(reduce_point(x))

    def value(self, x):
        """G at x (shape (2,) or (..., 2)).  Raises SingularityError at 0."""
        x = self._canonical(x)
        r2 = (x ** 2).sum(axis=-1)
        if np.any(r2 == 0.0):
            raise SingularityError("Green's function is singular at x = 0 (mod 1)")
        near = exp1(r2 / (4.0 * self.split)) / (4.0 * math.pi)
        out = near + self._smooth(x)
        return float(out) if out.ndim == 0 else out

    __call__ = value

    def regular(self, x):
        """R(x) = G(x) + (1/2pi) log|x| near the origin; R(0) by its limit."""
        x = self._canonical(x)
        r2 = (x ** 2).sum(axis=-1)
        z = r2 / (4.0 * self.split)
        near = (_ein_minus(np.atleast_1d(z)).reshape(z.shape) + math.log(4.0 * self.split)) / (4.0 * math.pi)
        out = near + self._smooth(x)
        return float(out) if out.ndim == 0 else out

    def gradient(self, x):
        """Gradient of G at x (..., 2)."""
        x = reduce_point(x)
        flat = x.reshape(-1, 2)
        r2 = (flat ** 2).sum(axis=1)
        if np.any(r2 == 0.0):
            raise SingularityError("Green's function gradient is singular at x = 0 (mod 1)")
        phase = 2.0 * math.pi * flat @ self._k.T
        spec = -(np.sin(phase) * self._ck) @ self._k * 2.0 * math.pi
        images = np.vstack([np.zeros((1, 2)), self._far])
        d = flat[:, None, :] - images[None, :, :]
        dsq = (d ** 2).sum(axis=2)
        coef = -np.exp(-dsq / (4.0 * self.split)) / (2.0 * math.pi * dsq)
        real = (coef[:, :, None] * d).sum(axis=1)
        return (spec + real).reshape(x.shape)

    @property
    def truncation(self):
        return self.modes

    @property
    def split_parameter(self):
        return self.split

    @property
    def cached_regular_part(self):
        return None if self._cache is None else self._cache[2]

    def regular_grid(self, n=64):
        """Cached grid of R over [-1/4, 1/4]^2 (built once, then read-only)."""
        if self._cache is None or self._cache[0] != n:
            s = np.linspace(-0.25, 0.25, n)
            X = np.stack(np.meshgrid(s, s, indexing="ij"), axis=-1)
            vals = self.regular(X)
            vals.setflags(write=False)
            self._cache = (n, s, vals)
        return self._cache[1], self._cache[2]


_DEFAULT = {}


def default_evaluator(tol=1e-12):
    if tol not in _DEFAULT:
        _DEFAULT[tol] = GreensEvaluator(tol=tol)
    return _DEFAULT[tol]


def greens_eval(x, tol=1e-10, evaluator=None):
    ev = evaluator if evaluator is not None else default_evaluator()
    ev.check_tol(tol)
    return ev.value(x)


def regular_part(x, evaluator=None):
    """R(x) for |x| < 1/2 (x taken as given, not reduced)."""
    x = np.asarray(x, float)
    if np.any(np.hypot(x[..., 0], x[..., 1]) >= 0.5):
        raise DomainError("regular_part is defined for |x| < 1/2")
    ev = evaluator if evaluator is not None else default_evaluator()
    return ev.regular(x)


# ----------------------------------------------------------------------------
# independent oracle: Fourier series summed in closed form along one axis


def spectral_oracle(x, cutoff=512):
    """G from the Fourier series with the k1 sum done in closed form,

        G = (1/4pi^2) [ 2 (pi^2/6 - pi t/2 + t^2/4)
              + sum_{0 < |k2| <= cutoff} cos(2 pi k2 x2) (pi/|k2|)
                  cosh(pi |k2| (1 - 2|x1|)) / sinh(pi |k2|) ],   t = 2 pi |x1|,

    which converges geometrically for x1 != 0 (mod 1)."""
    x = reduce_point(x)
    a = np.abs(x[..., 0])
    t = 2.0 * math.pi * a
    base = 2.0 * (math.pi ** 2 / 6.0 - math.pi * t / 2.0 + t * t / 4.0)
    k = np.arange(1, int(cutoff) + 1, dtype=float)
    aa = np.asarray(a)[..., None]
    # cosh(pi k (1 - 2a)) / sinh(pi k) written without overflow
    ratio = (np.exp(-2.0 * math.pi * k * aa) + np.exp(-2.0 * math.pi * k * (1.0 - aa))) / (
        1.0 - np.exp(-2.0 * math.pi * k))
    terms = 2.0 * np.cos(2.0 * math.pi * k * np.asarray(x[..., 1])[..., None]) * (math.pi / k) * ratio
    return (base + terms.sum(axis=-1)) / (4.0 * math.pi ** 2)


def oracle_regular_at_zero(cutoff=512, s0=0.1, levels=5):
    """R(0) from R(s, 0) = G(s, 0) + (1/2pi) log s at s = s0 / 2^j, with the
    even powers of s removed by Richardson extrapolation."""
    s = s0 / 2.0 ** np.arange(levels)
    pts = np.stack([s, np.zeros_like(s)], axis=1)
    vals = spectral_oracle(pts, cutoff) + np.log(s) / (2.0 * math.pi)
    table = list(vals)
    for j in range(1, levels):
        f = 4.0 ** j
        table = [(f * table[i + 1] - table[i]) / (f - 1.0) for i in range(len(table) - 1)]
    return float(table[0])


def zero_mean_check(evaluator=None, n=256):
    """Midpoint-rule mean of G on an n x n grid offset by half a cell."""
    ev = evaluator if evaluator is not None else default_evaluator()
    s = (np.arange(n) + 0.5) / n - 0.5
    X = np.stack(np.meshgrid(s, s, indexing="ij"), axis=-1)
    return float(ev.value(X).mean())


# ----------------------------------------------------------------------------
# placements


@dataclass
class TorusPlacement:
    """Bubble anchors on the torus.

    ``positions`` are canonicalized to [-1/2, 1/2)^2; ``bubble_index[k]`` is
    the configuration bubble placed at ``positions[k]``; ``radii`` are the
    enclosing radii of the unscaled clusters (0 for point bubbles), so the
    support of bubble k at scale eta lies in the disk of radius eta*radii[k].
    """

    positions: np.ndarray
    bubble_index: tuple = None
    eta: float = 0.0
    radii: np.ndarray = None
    energy: float = None
    initial_positions: np.ndarray = None
    initial_energy: float = None
    iterations: int = 0
    grad_norm: float = None
    n_grid: int = None
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = reduce_point(np.asarray(self.positions, float).reshape(-1, 2))
        K = len(self.positions)
        if self.bubble_index is None:
            self.bubble_index = tuple(range(K))
        if self.radii is None:
            self.radii = np.zeros(K)
        self.radii = np.asarray(self.radii, float)
        if self.eta < 0:
            raise DomainError("eta must be nonnegative")

    def __len__(self):
        return len(self.positions)

    def shifted(self, v):
        return TorusPlacement(self.positions + np.asarray(v, float), self.bubble_index, self.eta,
                              self.radii.copy())


@dataclass(frozen=True)
class PairDistance:
    distance: float
    pair: tuple
    overlap: bool


def min_pairwise_distance(placement):
    """Smallest torus distance between supports (centre distance minus the
    enclosing radii at scale eta).  Overlaps give a nonpositive distance and
    set the flag."""
    X = placement.positions
    if len(X) < 2:
        raise DomainError("need at least two bubbles")
    rad = placement.eta * placement.radii
    best = None
    for k in range(len(X)):
        for h in range(k + 1, len(X)):
            d = float(torus_distance(X[k], X[h])) - rad[k] - rad[h]
            if best is None or d < best[0]:
                best = (d, (k, h))
    d, pair = best
    return PairDistance(max(d, 0.0) if d == 0 else d, pair, bool(d <= 0.0))


def _weights(config, Gamma):
    G = GammaMatrix.of(Gamma).values
    m = np.asarray(config.masses)
    return 0.5 * m @ G @ m.T


def placement_energy(placement, config, Gamma, evaluator=None, gradient=False):
    """Surrogate placement functional sum_{k != h} w_kh G(x_k - x_h) with
    w_kh = (1/2) sum_ij Gamma_ij m_i^k m_j^h (point-mass weights)."""
    ev = evaluator if evaluator is not None else default_evaluator()
    config = Configuration(tuple(config))
    X = placement.positions
    if len(X) != len(placement.bubble_index):
        raise DomainError("placement and bubble index disagree")
    masses = Configuration(tuple(config.bubbles[i] for i in placement.bubble_index))
    W = _weights(masses, Gamma)
    K = len(X)
    if K < 2:
        return (0.0, np.zeros((K, 2))) if gradient else 0.0
    kk, hh = np.triu_indices(K, 1)
    D = reduce_point(X[kk] - X[hh])
    if np.any(np.all(D == 0.0, axis=1)):
        raise SingularityError("two bubbles share a position")
    vals = ev.value(D)
    energy = math.fsum(2.0 * W[kk, hh] * np.atleast_1d(vals))
    if not gradient:
        return energy
    g = ev.gradient(D) * (2.0 * W[kk, hh])[:, None]
    grad = np.zeros((K, 2))
    np.add.at(grad, kk, g)
    np.add.at(grad, hh, -g)
    return energy, grad


def grid_barycenters(n_grid):
    s = (np.arange(n_grid) + 0.5) / n_grid - 0.5
    return np.stack(np.meshgrid(s, s, indexing="ij"), axis=-1).reshape(-1, 2)


def _spread_sites(K, n_grid):
    """K distinct grid-square barycentres chosen greedily far apart."""
    sites = grid_barycenters(n_grid)
    chosen = [0]
    while len(chosen) < K:
        d = np.min(torus_distance(sites[:, None, :], sites[chosen][None, :, :]), axis=1)
        d[chosen] = -1.0
        chosen.append(int(np.argmax(d)))
    return sites[chosen]


def optimize_placement(config, Gamma, n_grid=None, evaluator=None, gtol=1e-8, maxiter=5000,
                       eta=0.0):
    """Minimize the placement functional starting from grid barycentres.

    The initial positions are K distinct barycentres of an n_grid x n_grid
    partition of the torus (n_grid >= ceil(sqrt(K)) + 1), spread greedily;
    then gradient descent with Barzilai-Borwein steps and Armijo
    backtracking runs until the gradient norm drops below gtol.
    """
    ev = evaluator if evaluator is not None else default_evaluator()
    config = Configuration(tuple(config))
    K = len(config)
    if K < 1:
        raise DomainError("configuration has no bubbles")
    need = math.ceil(math.sqrt(K)) + 1
    n_grid = need if n_grid is None else int(n_grid)
    if n_grid < need or K > n_grid ** 2:
        raise DomainError(f"{K} bubbles need n_grid >= {need}, got {n_grid}")
    W = _weights(config, Gamma)
    if np.any(W[~np.eye(K, dtype=bool)] < 0):
        # attracting pairs would collapse onto each other
        raise DomainError("placement needs nonnegative pair weights")
    if np.any(W[~np.eye(K, dtype=bool)] == 0):
        log.warning("some bubble pairs do not interact; their distance is not controlled")
    radii = cluster_radii(config) if eta > 0 else np.zeros(K)
    X0 = _spread_sites(K, n_grid)
    place = TorusPlacement(X0, tuple(range(K)), eta, radii)
    F, g = placement_energy(place, config, Gamma, ev, gradient=True)
    F0 = F
    X = place.positions.copy()
    step = 1e-2
    it = 0
    gnorm = float(np.linalg.norm(g))
    while gnorm >= gtol and it < maxiter:
        it += 1
        while True:
            Xn = reduce_point(X - step * g)
            trial = TorusPlacement(Xn, place.bubble_index, eta, radii)
            try:
                Fn, gn = placement_energy(trial, config, Gamma, ev, gradient=True)
            except SingularityError:
                Fn = np.inf
            if Fn <= F - 1e-4 * step * gnorm ** 2 or (Fn <= F and step < 1e-12):
                break
            step *= 0.5
            if step < 1e-16:
                break
        if not np.isfinite(Fn) or step < 1e-16:
            break
        s = reduce_point(Xn - X).ravel()
        y = (gn - g).ravel()
        sy = float(s @ y)
        X, F, g = Xn, Fn, gn
        gnorm = float(np.linalg.norm(g))
        step = float(s @ s) / sy if sy > 1e-300 else 2.0 * step
        step = min(max(step, 1e-8), 1.0)
    if gnorm >= gtol and gnorm > 1e-6:
        raise NumericError(f"placement descent stalled at gradient norm {gnorm:.2e}",
                           residual=gnorm, best=X)
    return TorusPlacement(X, tuple(range(K)), eta, radii, energy=F, initial_positions=X0,
                          initial_energy=F0, iterations=it, grad_norm=gnorm, n_grid=n_grid)


# ----------------------------------------------------------------------------
# quadrature over cluster lobes


def _arc_nodes(arc, t):
    """Points, tangent angles at fractions t in [0, 1] along an arc."""
    s = np.asarray(t) * arc.length
    half = 0.5 * arc.curvature * s
    d = s * np.sinc(half / math.pi)
    a = arc.tangent + half
    x = arc.start[0] + d * np.cos(a)
    y = arc.start[1] + d * np.sin(a)
    return np.stack([x, y], axis=-1), arc.tangent + arc.curvature * s


def _gauss(q):
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


def _triangle_rule(P0, P1, P2, q):
    u, wu = _gauss(q)
    U, V = np.meshgrid(u, u, indexing="ij")
    WU, WV = np.meshgrid(wu, wu, indexing="ij")
    a = U * (1.0 - V)
    b = U * V
    pts = P0 + a[..., None] * (P1 - P0) + b[..., None] * (P2 - P0)
    det = (P1[0] - P0[0]) * (P2[1] - P0[1]) - (P1[1] - P0[1]) * (P2[0] - P0[0])
    return pts.reshape(-1, 2), (WU * WV * U * det).ravel()


def _segment_rule(arc, q):
    """Signed rule for the region between an arc and its chord (positive
    when the arc turns left, i.e. bulges out of a counterclockwise loop)."""
    theta = arc.curvature * arc.length
    if theta == 0.0:
        return np.zeros((0, 2)), np.zeros(0)
    A = np.array(arc.start)
    B = np.array(arc.end)
    if abs(theta) <= 0.5 * math.pi:
        # chord form; the sagitta stays smooth for turns up to a right angle
        c = float(np.hypot(*(B - A)))
        e = (B - A) / c
        n_r = np.array([e[1], -e[0]])
        k = abs(arc.curvature)
        u, wu = _gauss(q)
        v, wv = _gauss(q)
        xs = (u - 0.5) * c
        h = (c * c / 4.0 - xs ** 2) * k / (np.sqrt(np.maximum(1.0 - (k * xs) ** 2, 0.0)) + math.cos(theta / 2.0))
        X, Vv = np.meshgrid(xs, v, indexing="ij")
        H = np.broadcast_to(h[:, None], X.shape)
        pts = 0.5 * (A + B) + X[..., None] * e + (Vv * H)[..., None] * n_r
        w = np.sign(theta) * np.outer(wu * c * h, wv)
        return pts.reshape(-1, 2), w.ravel()
    # sector about the centre minus the triangle (centre, end, start)
    r = 1.0 / arc.curvature
    O = A + r * np.array([-math.sin(arc.tangent), math.cos(arc.tangent)])
    phi0 = math.atan2(A[1] - O[1], A[0] - O[0])
    rho, wr = _gauss(q)
    t, wt = _gauss(2 * q)
    R = abs(r)
    P, T = np.meshgrid(rho * R, phi0 + t * theta, indexing="ij")
    pts = O + np.stack([P * np.cos(T), P * np.sin(T)], axis=-1)
    w = np.outer(wr * R * rho * R, wt * theta)
    tri_pts, tri_w = _triangle_rule(O, B, A, q)
    return np.vstack([pts.reshape(-1, 2), tri_pts]), np.concatenate([w.ravel(), tri_w])


def lobe_rule(arcs, q=8):
    """Signed quadrature rule (points, weights) for a lobe bounded by a
    counterclockwise loop of arcs: fan triangles of the junction polygon
    plus one circular segment per arc.  Exact area up to rounding."""
    verts = [np.array(a.start) for a in arcs]
    pts, wts = [], []
    for i in range(1, len(verts) - 1):
        p, w = _triangle_rule(verts[0], verts[i], verts[i + 1], q)
        pts.append(p)
        wts.append(w)
    for a in arcs:
        p, w = _segment_rule(a, q)
        pts.append(p)
        wts.append(w)
    return np.vstack(pts), np.concatenate(wts)


def _boundary_nodes(arcs, panels, q):
    """Composite Gauss nodes on a loop: points, outward normals, weights."""
    u, wu = _gauss(q)
    edges = np.linspace(0.0, 1.0, panels + 1)
    t = (edges[:-1, None] + np.outer(np.diff(edges), u)).ravel()
    wt = np.outer(np.diff(edges), wu).ravel()
    P, N, W = [], [], []
    for a in arcs:
        p, phi = _arc_nodes(a, t)
        P.append(p)
        N.append(np.stack([np.sin(phi), -np.cos(phi)], axis=-1))
        W.append(wt * a.length)
    return np.vstack(P), np.vstack(N), np.concatenate(W)


def _log_pair(nodes_a, nodes_b):
    Pa, Na, Wa = nodes_a
    Pb, Nb, Wb = nodes_b
    d = Pa[:, None, :] - Pb[None, :, :]
    r2 = (d ** 2).sum(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        psi = np.where(r2 > 0, r2 / 4.0 * (0.5 * np.log(r2) - 1.0), 0.0)
    return -float(Wa @ (psi * (Na @ Nb.T)) @ Wb)


def log_self_integrals(geom, tol=1e-10, q=8, max_panels=256):
    """Matrix I_ij = int_{lobe i} int_{lobe j} log|a - b| da db of one
    cluster, from the boundary double integral

        int_A int_B log|a - b| = - oint_dA oint_dB Psi(|a - b|) n_a . n_b

    with Psi(r) = (r^2/4)(log r - 1).  The kernel is only C^2 where arcs
    meet or coincide, so composite Gauss errors go like h^3 + h^5 + ...;
    panel doubling is combined with Richardson elimination of those
    powers."""
    lobes = sorted(geom.boundaries)
    levels = []
    extrap = []
    panels = 4
    while panels <= max_panels:
        nodes = {i: _boundary_nodes(geom.boundaries[i], panels, q) for i in lobes}
        I = np.zeros((3, 3))
        for a in lobes:
            for b in lobes:
                if b < a:
                    continue
                I[a, b] = I[b, a] = _log_pair(nodes[a], nodes[b])
        levels.append(I)
        table = list(levels)
        for power in (3, 5)[:len(levels) - 1]:
            f = 2.0 ** power
            table = [(f * table[k + 1] - table[k]) / (f - 1.0) for k in range(len(table) - 1)]
        extrap.append(table[-1])
        if len(extrap) >= 2 and len(levels) >= 3:
            change = np.max(np.abs(extrap[-1] - extrap[-2]))
            if change <= tol * max(1.0, np.max(np.abs(I))):
                return extrap[-1]
        panels *= 2
    raise AccuracyError("log self-interaction quadrature did not reach its tolerance",
                        residual=float(np.max(np.abs(extrap[-1] - extrap[-2]))), best=extrap[-1])


def cluster_frame(geom, q=8):
    """Per-type quadrature rules of one cluster, shifted so its area
    centroid is at the origin, and the enclosing radius about it."""
    rules = {i: lobe_rule(geom.boundaries[i], q) for i in sorted(geom.boundaries)}
    total = sum(w.sum() for _, w in rules.values())
    centroid = sum((p * w[:, None]).sum(axis=0) for p, w in rules.values()) / total
    t = np.linspace(0.0, 1.0, 2049)
    radius = 0.0
    for arcs in geom.boundaries.values():
        for a in arcs:
            p, _ = _arc_nodes(a, t)
            radius = max(radius, float(np.max(np.hypot(*(p - centroid).T))))
    rules = {i: (p - centroid, w) for i, (p, w) in rules.items()}
    return rules, centroid, radius


def cluster_radii(config):
    return np.array([cluster_frame(geometry.solve(b), q=2)[2] for b in config])


def eta_max(placement):
    """Largest eta with every enclosing radius below 1/4 and all supports
    pairwise disjoint at the given positions."""
    R = placement.radii
    bound = 0.25 / R.max() if R.max() > 0 else np.inf
    X = placement.positions
    for k in range(len(X)):
        for h in range(k + 1, len(X)):
            s = R[k] + R[h]
            if s > 0:
                bound = min(bound, float(torus_distance(X[k], X[h])) / s)
    return bound


def _pair_sum(f_vals, wa, ta, wb, tb, G):
    """sum_p sum_q (Gamma_{t_p t_q} / 2) w_p w_q f(p, q)."""
    coef = 0.5 * G[np.ix_(ta, tb)] * np.outer(wa, wb)
    return float((coef * f_vals).sum())


def assemble_E_eta(config, placement, eta, Gamma, evaluator=None, tol=1e-8, q=4):
    """Finite-eta energy of a configuration with frozen cluster shapes.

    Bubble k occupies x_k + eta * (cluster k about its centroid).  The
    perimeter part equals the summed cluster perimeters exactly; the
    interaction part is split as

        same bubble:  Gamma m m / (4 pi)
                      + (1/|log eta|) (Gamma_ij/2) [-(1/2pi) I_ij + int int R(eta(a-b))]
        two bubbles:  (1/|log eta|) (Gamma_ij/2) int int G(x_k - x_h + eta(a-b))

    with the log integrals I_ij done on the boundary and the smooth terms by
    product Gauss rules (order doubled until the change is below tol).
    Returns a dict with the total and its parts.
    """
    ev = evaluator if evaluator is not None else default_evaluator()
    G = GammaMatrix.of(Gamma).values
    config = Configuration(tuple(config))
    eta = float(eta)
    if not 0.0 < eta < 1.0:
        raise DomainError("eta must lie in (0, 1)")
    geoms = [geometry.solve(config.bubbles[i]) for i in placement.bubble_index]
    frames = [cluster_frame(g) for g in geoms]
    radii = np.array([f[2] for f in frames])
    place = TorusPlacement(placement.positions, placement.bubble_index, eta, radii)
    emax = eta_max(place)
    if not eta < emax:
        raise DomainError(f"eta = {eta:g} exceeds eta_max = {emax:.4g} for this placement")
    L = abs(math.log(eta))
    perim = math.fsum(g.perimeter for g in geoms)
    masses = [g.masses for g in geoms]
    leading = math.fsum(float(m @ G @ m) / (4.0 * math.pi) for m in masses)

    def rules_at(order):
        out = []
        for g in geoms:
            rules, c, _ = cluster_frame(g, order)
            pts = np.vstack([rules[i][0] for i in sorted(rules)])
            w = np.concatenate([rules[i][1] for i in sorted(rules)])
            t = np.concatenate([[i] * len(rules[i][1]) for i in sorted(rules)]).astype(int)
            out.append((pts, w, t))
        return out

    def smooth_parts(order):
        rules = rules_at(order)
        self_reg, cross = [], []
        for k, (pk, wk, tk) in enumerate(rules):
            # R is even: off-diagonal pairs are counted once and doubled
            iu, ju = np.triu_indices(len(wk), 1)
            coef = 0.5 * G[tk[iu], tk[ju]] * wk[iu] * wk[ju]
            vals = ev.regular(eta * (pk[iu] - pk[ju]))
            diag = 0.5 * G[tk, tk] * wk * wk * ev.regular(np.zeros(2))
            self_reg.append(2.0 * math.fsum(coef * vals) + math.fsum(diag))
            for h in range(k + 1, len(rules)):
                ph, wh, th = rules[h]
                base = place.positions[k] - place.positions[h]
                D = base + eta * (pk[:, None, :] - ph[None, :, :])
                cross.append(2.0 * _pair_sum(ev.value(D), wk, tk, wh, th, G))
        return math.fsum(self_reg), math.fsum(cross)

    prev = None
    order = q
    while order <= 4 * q:
        cur = smooth_parts(order)
        if prev is not None and max(abs(cur[0] - prev[0]), abs(cur[1] - prev[1])) <= tol * max(
                1.0, abs(cur[0]) + abs(cur[1])):
            break
        prev, order = cur, order + 2
    else:
        raise AccuracyError("smooth interaction quadrature did not reach its tolerance")
    self_reg, cross = cur
    logs = []
    for g in geoms:
        I = log_self_integrals(g, tol=min(tol, 1e-10))
        logs.append(-float((0.5 * G * I).sum()) / (2.0 * math.pi))
    self_log = math.fsum(logs)
    correction = (self_log + self_reg + cross) / L
    e0_sum = perim + leading
    total = e0_sum + correction
    return {
        "total": total,
        "perimeter": perim,
        "leading_interaction": leading,
        "self_log": self_log / L,
        "self_regular": self_reg / L,
        "cross": cross / L,
        "e0_sum": e0_sum,
        "remainder": correction,
        "scaled_remainder": correction * L,
        "eta": eta,
        "eta_max": emax,
    }
