"""Exact planar geometry of single, double and triple bubble clusters.

A cluster is a union of one to three lobes bounded by circular arcs that
meet in threes at 120 degree junctions.  Arcs are indexed as in the usual
triple-bubble picture:

    0, 1, 2   outer arcs of lobes 1, 2, 3
    3         wall between lobes 1 and 2
    4         wall between lobes 1 and 3
    5         wall between lobes 2 and 3

Curvatures follow the convention ``k_outer > 0`` and, for the wall between
lobes i < j, ``k_wall = k_j - k_i``, so a wall bows into the larger lobe.

The triple bubble is solved for unknowns ``(k1, k2, k3, L12, L13, L23)``
(outer curvatures and wall lengths).  Walls are marched out of the central
junction, outer arcs are marched between wall ends with the turning fixed by
the 120 degree rule, and a damped Gauss-Newton iteration drives the three
area residuals and six closure residuals to zero.  Only three closure
residuals are independent, which is why the least-squares step is used.
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, NumericError

TWO_PI = 2.0 * math.pi
THIRD_TURN = TWO_PI / 3.0

# lobe area of the symmetric triple bubble whose straight walls have unit length
SYMMETRIC_LOBE_AREA = math.sqrt(3.0) / 4.0 + 3.0 * math.pi / 8.0

WALL_INDEX = {(0, 1): 3, (0, 2): 4, (1, 2): 5}
WALL_LOBES = {3: (0, 1), 4: (0, 2), 5: (1, 2)}

DEGENERACY_RATIO = 1e-9
NEWTON_TOL = 1e-12
NEWTON_MAXITER = 100


class Kind(enum.Enum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3


@dataclass(frozen=True)
class MassTriple:
    """Lobe masses ``(m1, m2, m3)`` of one bubble; zeros mark absent lobes."""

    m1: float
    m2: float
    m3: float

    def __post_init__(self):
        vals = (self.m1, self.m2, self.m3)
        if not all(math.isfinite(v) for v in vals):
            raise DomainError(f"non-finite lobe mass in {vals}")
        if min(vals) < 0:
            raise DomainError(f"negative lobe mass in {vals}")
        if max(vals) <= 0:
            raise DomainError("a bubble needs at least one positive lobe")
        for name, v in zip(("m1", "m2", "m3"), vals):
            object.__setattr__(self, name, float(v))

    @classmethod
    def of(cls, m):
        if isinstance(m, MassTriple):
            return m
        m = tuple(float(v) for v in m)
        if len(m) != 3:
            raise DomainError(f"expected three lobe masses, got {len(m)}")
        return cls(*m)

    @property
    def values(self):
        return np.array([self.m1, self.m2, self.m3])

    @property
    def lobes(self):
        return tuple(i for i, v in enumerate((self.m1, self.m2, self.m3)) if v > 0)

    @property
    def kind(self):
        return Kind(len(self.lobes))

    @property
    def label(self):
        idx = ",".join(str(i + 1) for i in self.lobes)
        return {Kind.SINGLE: f"Single({idx})", Kind.DOUBLE: f"Double({idx})",
                Kind.TRIPLE: "Triple"}[self.kind]

    def __iter__(self):
        return iter((self.m1, self.m2, self.m3))


@dataclass(frozen=True)
class BoundaryArc:
    """Oriented circular arc: start point, start tangent angle, signed
    curvature (positive turns left) and arc length."""

    start: tuple
    tangent: float
    curvature: float
    length: float

    @property
    def turning(self):
        return self.curvature * self.length

    @property
    def end(self):
        x, y, _ = _march(self.start[0], self.start[1], self.tangent,
                         self.curvature, self.length)
        return (x, y)


@dataclass
class ClusterGeometry:
    """Arc-system description of a solved cluster.

    Arrays of length 6 are indexed by arc (see module docstring) and hold NaN
    for arcs that are absent.  ``junctions`` has four rows (central junction
    first for a triple bubble); unused rows are NaN.
    """

    masses: np.ndarray
    kind: Kind
    curvatures: np.ndarray
    arc_angles: np.ndarray
    chords: np.ndarray
    lengths: np.ndarray
    junction_angles: np.ndarray
    junctions: np.ndarray
    centers: np.ndarray
    perimeter: float
    boundaries: dict = field(default_factory=dict)
    arc_ends: dict = field(default_factory=dict)
    turnings: np.ndarray = None
    degenerate: bool = False
    residual: float = 0.0
    solver_state: tuple = None

    @property
    def radii(self):
        with np.errstate(divide="ignore"):
            return 1.0 / np.abs(self.curvatures)

    @property
    def outer_curvatures(self):
        return self.curvatures[:3].copy()

    def lobe_areas(self):
        return np.array([
            _loop_area(self.boundaries[i]) if i in self.boundaries else 0.0
            for i in range(3)
        ])

    def to_record(self):
        """Flat JSON-ready description of the cluster."""

        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in np.ravel(a)]

        return {
            "kind": self.kind.name.lower(),
            "masses": clean(self.masses),
            "curvatures": clean(self.curvatures),
            "arc_angles": clean(self.arc_angles),
            "chords": clean(self.chords),
            "arc_lengths": clean(self.lengths),
            "junction_angles": clean(self.junction_angles),
            "junctions": [clean(p) for p in self.junctions],
            "centers": [clean(p) for p in self.centers],
            "perimeter": float(self.perimeter),
            "degenerate": bool(self.degenerate),
        }


# ----------------------------------------------------------------------------
# arc primitives


LOG_LIMIT = 40.0  # |log| of curvatures and wall lengths


def _march(px, py, beta, k, s):
    """End point and end tangent of an arc of curvature k and length s."""
    half = 0.5 * k * s
    if abs(half) < 1e-8:
        sinc = 1.0 - half * half / 6.0
    else:
        sinc = math.sin(half) / half
    d = s * sinc
    a = beta + half
    return px + d * math.cos(a), py + d * math.sin(a), beta + k * s


def _segment(k, s):
    """Signed area between an arc and its chord (positive for left turns)."""
    th = k * s
    if abs(th) < 1e-3:
        th2 = th * th
        g = th / 12.0 - th * th2 / 240.0 + th * th2 * th2 / 10080.0
    else:
        g = (th - math.sin(th)) / (2.0 * th * th)
    return s * s * g


def _loop_area(arcs):
    area = 0.0
    for arc in arcs:
        x0, y0 = arc.start
        x1, y1 = arc.end
        area += 0.5 * (x0 * y1 - x1 * y0) + _segment(arc.curvature, arc.length)
    return area


# ----------------------------------------------------------------------------
# triple bubble kernel


def _build_triple(k, L):
    """March a triple bubble from outer curvatures k and wall lengths L.

    Lobes are labelled 0, 1, 2; L is ordered (L01, L02, L12).  Returns the
    lobe areas, the six closure residuals, the perimeter and the junction /
    arc data.  Walls leave the central junction at 90, 210 and 330 degrees.
    """
    k0, k1, k2 = k
    L01, L02, L12 = L
    # signed wall curvature = k(left lobe) - k(right lobe)
    w01, w02, w12 = k0 - k1, k2 - k0, k1 - k2
    b01 = 0.5 * math.pi
    x01, y01, t01 = _march(0.0, 0.0, b01, w01, L01)
    x02, y02, t02 = _march(0.0, 0.0, b01 + THIRD_TURN, w02, L02)
    x12, y12, t12 = _march(0.0, 0.0, b01 - THIRD_TURN, w12, L12)

    def outer(px, py, t_from, t_to, kk):
        start = t_from + math.pi / 3.0
        turn = (t_to + 2.0 * math.pi / 3.0 - start) % TWO_PI
        length = turn / kk
        ex, ey, _ = _march(px, py, start, kk, length)
        return ex, ey, length, turn

    e0x, e0y, l0, th0 = outer(x01, y01, t01, t02, k0)
    e2x, e2y, l2, th2 = outer(x02, y02, t02, t12, k2)
    e1x, e1y, l1, th1 = outer(x12, y12, t12, t01, k1)

    a0 = 0.5 * (x01 * y02 - x02 * y01) + _segment(w01, L01) + _segment(k0, l0) - _segment(w02, L02)
    a2 = 0.5 * (x02 * y12 - x12 * y02) + _segment(w02, L02) + _segment(k2, l2) - _segment(w12, L12)
    a1 = 0.5 * (x12 * y01 - x01 * y12) + _segment(w12, L12) + _segment(k1, l1) - _segment(w01, L01)
    closure = (e0x - x02, e0y - y02, e2x - x12, e2y - y12, e1x - x01, e1y - y01)
    perimeter = L01 + L02 + L12 + l0 + l1 + l2
    data = {
        "junctions": ((0.0, 0.0), (x01, y01), (x02, y02), (x12, y12)),
        "outer_turn": (th0, th1, th2),
        "wall_turn": (w01 * L01, w02 * L02, w12 * L12),
    }
    return (a0, a1, a2), closure, perimeter, data


def _triple_residual(y, m):
    if not np.all(np.abs(y) < LOG_LIMIT):
        return np.full(9, np.inf)  # trial step left the representable range
    x = np.exp(y)
    areas, closure, _, _ = _build_triple(x[:3], x[3:])
    scale = math.sqrt(m[0] + m[1] + m[2])
    r = np.empty(9)
    r[:3] = (np.asarray(areas) - m) / m
    r[3:] = np.asarray(closure) / scale
    return r


def _march_v(px, py, beta, k, s):
    half = 0.5 * k * s
    d = s * np.sinc(half / math.pi)
    a = beta + half
    return px + d * np.cos(a), py + d * np.sin(a), beta + k * s


def _segment_v(k, s):
    th = k * s
    small = np.abs(th) < 1e-3
    if small.any():
        ts = np.where(small, 1.0, th)
        g = (ts - np.sin(ts)) / (2.0 * ts * ts)
        t = th[small]
        g[small] = t / 12.0 - t ** 3 / 240.0 + t ** 5 / 10080.0
    else:
        g = (th - np.sin(th)) / (2.0 * th * th)
    return s * s * g


def _triple_residual_v(Y, m):
    """Row-wise _triple_residual for a stack of unknown vectors."""
    with np.errstate(over="ignore", invalid="ignore"):
        X = np.exp(np.clip(Y, -LOG_LIMIT, LOG_LIMIT))
    k0, k1, k2 = X[:, 0], X[:, 1], X[:, 2]
    L01, L02, L12 = X[:, 3], X[:, 4], X[:, 5]
    w01, w02, w12 = k0 - k1, k2 - k0, k1 - k2
    b01 = 0.5 * math.pi
    z = np.zeros_like(k0)
    x01, y01, t01 = _march_v(z, z, b01, w01, L01)
    x02, y02, t02 = _march_v(z, z, b01 + THIRD_TURN, w02, L02)
    x12, y12, t12 = _march_v(z, z, b01 - THIRD_TURN, w12, L12)

    def outer(px, py, t_from, t_to, kk):
        start = t_from + math.pi / 3.0
        turn = np.mod(t_to + 2.0 * math.pi / 3.0 - start, TWO_PI)
        length = turn / kk
        ex, ey, _ = _march_v(px, py, start, kk, length)
        return ex, ey, length

    e0x, e0y, l0 = outer(x01, y01, t01, t02, k0)
    e2x, e2y, l2 = outer(x02, y02, t02, t12, k2)
    e1x, e1y, l1 = outer(x12, y12, t12, t01, k1)
    a0 = 0.5 * (x01 * y02 - x02 * y01) + _segment_v(w01, L01) + _segment_v(k0, l0) - _segment_v(w02, L02)
    a2 = 0.5 * (x02 * y12 - x12 * y02) + _segment_v(w02, L02) + _segment_v(k2, l2) - _segment_v(w12, L12)
    a1 = 0.5 * (x12 * y01 - x01 * y12) + _segment_v(w12, L12) + _segment_v(k1, l1) - _segment_v(w01, L01)
    scale = math.sqrt(m[0] + m[1] + m[2])
    R = np.empty((Y.shape[0], 9))
    R[:, 0] = (a0 - m[0]) / m[0]
    R[:, 1] = (a1 - m[1]) / m[1]
    R[:, 2] = (a2 - m[2]) / m[2]
    R[:, 3:] = np.stack([e0x - x02, e0y - y02, e2x - x12, e2y - y12, e1x - x01, e1y - y01], axis=1) / scale
    return R


def _jacobian(y, m, h=1e-6):
    n = y.size
    steps = np.vstack([np.eye(n) * h, -np.eye(n) * h])
    R = _triple_residual_v(y + steps, m)
    return ((R[:n] - R[n:]) / (2.0 * h)).T


def _newton(y, m, tol, maxiter=NEWTON_MAXITER):
    """Damped Gauss-Newton on the consistent 9x6 system.

    The Jacobian is kept for further (chord) steps as long as each one at
    least halves the residual; otherwise it is recomputed.  Returns
    (y, max-abs residual, converged).
    """
    r = _triple_residual(y, m)
    err = np.max(np.abs(r))
    J, fresh = None, False
    for _ in range(maxiter):
        if err < tol:
            break
        if J is None:
            J = _jacobian(y, m)
            fresh = True
            if not np.all(np.isfinite(J)):
                return y, err, False
        dy = np.linalg.lstsq(J, -r, rcond=None)[0]
        norm0 = np.linalg.norm(r)
        yn = y + dy
        rn = _triple_residual(yn, m)
        if np.all(np.isfinite(rn)) and np.linalg.norm(rn) < norm0 * (1.0 - 1e-4 if fresh else 0.5):
            y, r = yn, rn
            err = np.max(np.abs(r))
            fresh = False
            continue
        if not fresh:
            J = None
            continue
        t = 0.5
        while True:
            yn = y + t * dy
            rn = _triple_residual(yn, m)
            if np.all(np.isfinite(rn)) and np.linalg.norm(rn) < norm0 * (1.0 - 1e-4 * t):
                break
            t *= 0.5
            if t < 1e-6:
                return y, err, False
        y, r = yn, rn
        err = np.max(np.abs(r))
        J = None
    return y, err, err < tol


def _symmetric_unknowns(m):
    """Log unknowns of the symmetric triple bubble with lobe area m."""
    L = math.sqrt(m / SYMMETRIC_LOBE_AREA)
    r = L * math.sqrt(3.0) / 2.0
    return np.log(np.array([1.0 / r] * 3 + [L] * 3))


def _continue(y, m_from, m_to, min_step=1e-6):
    """Follow the straight mass path m_from -> m_to, halving on failure."""
    t, h = 0.0, 1.0
    best = np.inf
    while t < 1.0:
        tn = min(1.0, t + h)
        mt = (1.0 - tn) * m_from + tn * m_to
        final = tn >= 1.0
        yn, err, ok = _newton(y, mt, NEWTON_TOL if final else 1e-8,
                              maxiter=NEWTON_MAXITER if final else 30)
        if final and not ok and err < 1e-10:
            ok = True  # stagnated at round-off level
        if ok:
            y, t = yn, tn
            h = min(2.0 * h, 1.0)
        else:
            best = min(best, err)
            h *= 0.5
            if h < min_step:
                raise NumericError(
                    f"triple bubble solve did not converge toward masses {m_to}",
                    residual=best, best=np.exp(y))
    return y, err


def _canonical(m):
    """Sort lobes by decreasing mass (stable); return perm and sorted masses."""
    perm = tuple(sorted(range(3), key=lambda i: (-m[i], i)))
    return perm, np.array([m[i] for i in perm])


def solve_triple(m, guess=None):
    """Solve the triple bubble with lobe masses m (all positive).

    ``guess`` may be a previously solved triple-bubble geometry; the solve
    then continues from it instead of from the symmetric configuration.
    Extremely lopsided masses (smallest/largest < 1e-9) are handed to the
    double or single solver and the result is flagged ``degenerate``.
    """
    m = MassTriple.of(m)
    if m.kind is not Kind.TRIPLE:
        raise DomainError(f"solve_triple needs three positive masses, got {tuple(m)}")
    vals = m.values
    if vals.min() / vals.max() < DEGENERACY_RATIO:
        keep = [i for i in range(3) if vals[i] / vals.max() >= DEGENERACY_RATIO]
        reduced = np.where(np.isin(np.arange(3), keep), vals, 0.0)
        geom = solve(reduced)
        geom.degenerate = True
        geom.masses = vals.copy()
        return geom

    perm, ms = _canonical(vals)
    scale = ms[0]
    target = ms / scale
    sym = (_symmetric_unknowns(1.0), np.ones(3))
    if guess is not None and guess.solver_state is not None:
        y0, m_from = guess.solver_state
        try:
            y, err = _continue(np.asarray(y0, float), np.asarray(m_from, float), target)
        except NumericError:
            # warm starts can sit across a bad stretch of the path
            y, err = _continue(*sym, target)
    else:
        y, err = _continue(*sym, target)

    x = np.exp(y)
    # map canonical unknowns back to the caller's lobe labels
    k = np.empty(3)
    for c in range(3):
        k[perm[c]] = x[c] / math.sqrt(scale)
    canon_walls = {(0, 1): x[3], (0, 2): x[4], (1, 2): x[5]}
    L = {}
    for (a, b), length in canon_walls.items():
        L[tuple(sorted((perm[a], perm[b])))] = length * math.sqrt(scale)
    geom = _assemble_triple(vals, k, (L[(0, 1)], L[(0, 2)], L[(1, 2)]))
    geom.residual = err
    geom.solver_state = (y.copy(), target.copy())
    return geom


def _arc_from_chord(A, B, theta):
    """Derived data of an arc from A to B with signed turning theta."""
    dx, dy = B[0] - A[0], B[1] - A[1]
    h = math.hypot(dx, dy)
    phi = math.atan2(dy, dx)
    half = 0.5 * theta
    if abs(half) < 1e-12:
        k, s = 0.0, h
    else:
        k = 2.0 * math.sin(half) / h
        s = h * half / math.sin(half)
    beta = phi - half
    if k == 0.0:
        center = (math.nan, math.nan)
    else:
        center = (A[0] - math.sin(beta) / k, A[1] + math.cos(beta) / k)
    return {"h": h, "k": k, "s": s, "beta": beta, "center": center, "theta": theta}


def _finish(masses, kind, junctions, arcs, lobe_loops, outer_sign):
    """Common assembly of a ClusterGeometry from per-arc chord data.

    ``arcs`` maps arc index -> (start, end, signed turning) or a closed
    circle ``(center, radius)``; ``lobe_loops`` maps lobe -> [(arc, +-1)].
    """
    curv = np.full(6, np.nan)
    angles = np.full(6, np.nan)
    chords = np.full(6, np.nan)
    lengths = np.full(6, np.nan)
    centers = np.full((6, 2), np.nan)
    turnings = np.full(6, np.nan)
    info = {}
    for idx, (A, B, theta) in arcs.items():
        d = _arc_from_chord(A, B, theta)
        info[idx] = d
        turnings[idx] = theta
        angles[idx] = abs(theta)
        chords[idx] = d["h"]
        lengths[idx] = d["s"]
        centers[idx] = d["center"]
        curv[idx] = outer_sign[idx] * d["k"]
    boundaries = {}
    for lobe, loop in lobe_loops.items():
        pieces = []
        for idx, sgn in loop:
            d = info[idx]
            A, B, _ = arcs[idx]
            if sgn > 0:
                pieces.append(BoundaryArc(tuple(A), d["beta"], d["k"], d["s"]))
            else:
                pieces.append(BoundaryArc(tuple(B), d["beta"] + d["theta"] + math.pi,
                                          -d["k"], d["s"]))
        boundaries[lobe] = pieces
    J = np.full((4, 2), np.nan)
    for i, p in enumerate(junctions):
        J[i] = p
    return ClusterGeometry(
        masses=np.asarray(masses, float).copy(), kind=kind, curvatures=curv,
        arc_angles=angles, chords=chords, lengths=lengths,
        junction_angles=np.full(3, np.nan), junctions=J, centers=centers,
        perimeter=float(np.nansum(lengths)), boundaries=boundaries,
        arc_ends={i: (a[0], a[1]) for i, a in arcs.items()}, turnings=turnings)


def _assemble_triple(masses, k, L):
    _, _, _, data = _build_triple(k, L)
    P0, P01, P02, P12 = data["junctions"]
    th0, th1, th2 = data["outer_turn"]
    t01, t02, t12 = data["wall_turn"]
    arcs = {
        0: (P01, P02, th0),
        1: (P12, P01, th1),
        2: (P02, P12, th2),
        3: (P0, P01, t01),
        4: (P0, P02, t02),
        5: (P0, P12, t12),
    }
    loops = {
        0: [(3, 1), (0, 1), (4, -1)],
        1: [(5, 1), (1, 1), (3, -1)],
        2: [(4, 1), (2, 1), (5, -1)],
    }
    # left lobe of wall 3 is lobe 0 (i), of wall 4 lobe 2 (j), of wall 5 lobe 1 (i)
    sign = {0: 1.0, 1: 1.0, 2: 1.0, 3: -1.0, 4: 1.0, 5: -1.0}
    geom = _finish(masses, Kind.TRIPLE, data["junctions"], arcs, loops, sign)

    def direction(p):
        return math.atan2(p[1], p[0])

    d01, d02, d12 = direction(P01), direction(P02), direction(P12)
    geom.junction_angles = np.array([
        (d02 - d01) % TWO_PI,   # s4: between chords of walls 1|2 and 1|3
        (d01 - d12) % TWO_PI,   # s5: between chords of walls 1|2 and 2|3
        (d12 - d02) % TWO_PI,   # s6: between chords of walls 1|3 and 2|3
    ])
    return geom


# ----------------------------------------------------------------------------
# double and single bubbles


def _half_segment(alpha):
    """Segment area over a unit chord for tangent-chord angle alpha."""
    if abs(alpha) < 1e-12:
        return alpha / 6.0
    s = alpha / math.sin(alpha)
    return _segment(2.0 * alpha / s, s)


def _double_areas(c):
    """Lobe areas (left, right) of a unit-chord double bubble whose interface
    has tangent-chord angle c (c > 0 bows the interface into the left lobe)."""
    a_left = THIRD_TURN + c
    a_right = THIRD_TURN - c
    w = _half_segment(c)
    return _half_segment(a_left) - w, _half_segment(a_right) + w


def solve_double(mi, mj, lobes=(0, 1)):
    """Standard double bubble with lobe masses mi (lobe lobes[0]) and mj.

    The interface runs from the origin along +y with lobe ``lobes[0]`` on
    its left.
    """
    if not (mi > 0 and mj > 0):
        raise DomainError(f"double bubble needs two positive masses, got {(mi, mj)}")
    i, j = lobes
    if i > j:
        return solve_double(mj, mi, (j, i))
    if mi / mj < DEGENERACY_RATIO or mj / mi < DEGENERACY_RATIO:
        masses = np.zeros(3)
        masses[i], masses[j] = mi, mj
        big = i if mi >= mj else j
        geom = solve_single(max(mi, mj), lobe=big)
        geom.degenerate = True
        geom.masses = masses
        return geom

    target = math.log(mi / mj)

    def f(c):
        a, b = _double_areas(c)
        return math.log(a / b) - target

    lim = math.pi / 3.0 - 1e-13
    try:
        c = brentq(f, -lim, lim, xtol=1e-17, rtol=1e-15, maxiter=400)
    except ValueError as exc:
        raise NumericError(f"double bubble bracket failed for {(mi, mj)}") from exc
    ua, ub = _double_areas(c)
    d = math.sqrt((mi + mj) / (ua + ub))
    P0, P1 = (0.0, 0.0), (0.0, d)
    wall = WALL_INDEX[(i, j)]
    arcs = {
        wall: (P0, P1, -2.0 * c),
        i: (P1, P0, 2.0 * (THIRD_TURN + c)),
        j: (P0, P1, 2.0 * (THIRD_TURN - c)),
    }
    loops = {i: [(wall, 1), (i, 1)], j: [(j, 1), (wall, -1)]}
    # wall traversed upward has lobe i on its left: k_wall(convention) = -k
    sign = {i: 1.0, j: 1.0, wall: -1.0}
    masses = np.zeros(3)
    masses[i], masses[j] = mi, mj
    geom = _finish(masses, Kind.DOUBLE, [P0, P1], arcs, loops, sign)
    geom.residual = abs(f(c))
    return geom


def solve_single(m, lobe=0):
    """Round disk of area m; centre at the origin."""
    if not m > 0:
        raise DomainError(f"single bubble needs a positive mass, got {m}")
    r = math.sqrt(m / math.pi)
    masses = np.zeros(3)
    masses[lobe] = m
    curv = np.full(6, np.nan)
    curv[lobe] = 1.0 / r
    angles = np.full(6, np.nan)
    angles[lobe] = TWO_PI
    chords = np.full(6, np.nan)
    chords[lobe] = 0.0
    lengths = np.full(6, np.nan)
    lengths[lobe] = TWO_PI * r
    centers = np.full((6, 2), np.nan)
    centers[lobe] = (0.0, 0.0)
    turnings = np.full(6, np.nan)
    turnings[lobe] = TWO_PI
    loop = [BoundaryArc((r, 0.0), 0.5 * math.pi, 1.0 / r, TWO_PI * r)]
    return ClusterGeometry(
        masses=masses, kind=Kind.SINGLE, curvatures=curv, arc_angles=angles,
        chords=chords, lengths=lengths, junction_angles=np.full(3, np.nan),
        junctions=np.full((4, 2), np.nan), centers=centers,
        perimeter=2.0 * math.sqrt(math.pi * m), boundaries={lobe: loop},
        turnings=turnings)


def solve(m, guess=None):
    """Dispatch on the zero pattern of m."""
    m = MassTriple.of(m)
    lobes = m.lobes
    vals = m.values
    if m.kind is Kind.SINGLE:
        return solve_single(vals[lobes[0]], lobe=lobes[0])
    if m.kind is Kind.DOUBLE:
        return solve_double(vals[lobes[0]], vals[lobes[1]], lobes)
    return solve_triple(m, guess=guess)


def perimeter(m, guess=None):
    return solve(m, guess=guess).perimeter


def perimeter_gradient(m, guess=None):
    """Outer-lobe curvatures 1/r_i, which equal dp/dm_i.  Absent lobes get NaN."""
    m = MassTriple.of(m)
    geom = solve(m, guess=guess)
    g = np.full(3, np.nan)
    for i in m.lobes:
        if geom.degenerate and not np.isfinite(geom.curvatures[i]):
            continue
        g[i] = geom.curvatures[i]
    return g


def comparability_constants(sample_grid):
    """Smallest and largest m_i * k_i**2 (= m_i / r_i**2) over a sample of
    mass triples, i.e. empirical constants with c1 r^2 <= m <= c2 r^2."""
    samples = list(sample_grid)
    if not samples:
        raise DomainError("comparability_constants needs a nonempty grid")
    ratios = []
    for m in samples:
        m = MassTriple.of(m)
        geom = solve(m)
        for i in m.lobes:
            ratios.append(m.values[i] * geom.curvatures[i] ** 2)
    ratios = np.asarray(ratios)
    return float(ratios.min()), float(ratios.max())


# ----------------------------------------------------------------------------
# diagnostics


def junction_angle_error(geom):
    """Largest deviation from 120 degrees over all junctions.

    Tangents are recomputed from junction coordinates and arc turnings only.
    """
    if geom.kind is Kind.SINGLE:
        return 0.0
    directions = {}
    for idx, (A, B) in geom.arc_ends.items():
        theta = geom.turnings[idx]
        phi = math.atan2(B[1] - A[1], B[0] - A[0])
        directions.setdefault(tuple(np.round(A, 12)), []).append(phi - 0.5 * theta)
        directions.setdefault(tuple(np.round(B, 12)), []).append(phi + 0.5 * theta + math.pi)
    worst = 0.0
    for dirs in directions.values():
        if len(dirs) != 3:
            return math.inf
        dirs = sorted(d % TWO_PI for d in dirs)
        gaps = [dirs[1] - dirs[0], dirs[2] - dirs[1], dirs[0] + TWO_PI - dirs[2]]
        worst = max(worst, max(abs(g - THIRD_TURN) for g in gaps))
    return worst


def reciprocal_residual(geom):
    """Largest violation of k_wall(i,j) = k_j - k_i over present walls."""
    k = geom.curvatures
    worst = 0.0
    for wall, (i, j) in WALL_LOBES.items():
        if np.isfinite(k[wall]):
            worst = max(worst, abs(k[wall] - (k[j] - k[i])))
    return worst


def area_error(geom):
    """Largest relative error of the recomputed lobe areas."""
    areas = geom.lobe_areas()
    m = geom.masses
    present = m > 0
    return float(np.max(np.abs(areas[present] - m[present]) / m[present]))


def collinearity_residual(geom):
    """Largest normalized cross product for the four centre lines
    (O1,O2,O4), (O1,O3,O5), (O2,O3,O6), (O4,O5,O6); lines through a straight
    wall are skipped."""
    O = geom.centers
    worst = 0.0
    for a, b, c in ((0, 1, 3), (0, 2, 4), (1, 2, 5), (3, 4, 5)):
        pts = O[[a, b, c]]
        if not np.all(np.isfinite(pts)):
            continue
        u, v = pts[1] - pts[0], pts[2] - pts[0]
        scale = max(np.linalg.norm(u) * np.linalg.norm(v), 1e-300)
        worst = max(worst, abs(u[0] * v[1] - u[1] * v[0]) / scale)
    return worst
