"""Finite simply connected lattice domains and their continuum companions.

Lattice sets are stored as integer points together with an exact rational
spacing ``h``; the continuum embedding is ``x -> h * x``.  The 1/N-scale
approximation of a Jordan domain therefore lives on the integer lattice
with ``h = 1/N``.
"""

from __future__ import annotations

import configparser
import json
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

NEIGHBORS = ((1, 0), (0, 1), (-1, 0), (0, -1))

# distance constants for inner boundary, outer boundary, union-of-squares boundary
C_INNER = 2 * math.sqrt(2) + 1 / math.sqrt(2)
C_OUTER = math.sqrt(2) + 1 / math.sqrt(2)
C_SQUARES = 2 * math.sqrt(2)


class EmptyDomain(ValueError):
    pass


class NotSimplyConnected(ValueError):
    pass


class ArcsTooClose(ValueError):
    pass


def admissibility_threshold(N: int) -> float:
    """Smallest arc separation accepted at scale N: N^(-1/48) (log N)^(2/3)."""
    if N < 2:
        return 0.0
    return N ** (-1.0 / 48.0) * math.log(N) ** (2.0 / 3.0)


def _flood(start, allowed: Callable[[tuple], bool]) -> set:
    seen = {start}
    queue = deque([start])
    while queue:
        x, y = queue.popleft()
        for dx, dy in NEIGHBORS:
            q = (x + dx, y + dy)
            if q not in seen and allowed(q):
                seen.add(q)
                queue.append(q)
    return seen


def is_connected(points: frozenset) -> bool:
    if not points:
        return False
    start = next(iter(points))
    return len(_flood(start, points.__contains__)) == len(points)


def complement_connected(points: frozenset) -> bool:
    """True if Z^2 minus the set is 4-connected (no holes)."""
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    x0, x1, y0, y1 = min(xs) - 1, max(xs) + 1, min(ys) - 1, max(ys) + 1

    def allowed(q):
        return x0 <= q[0] <= x1 and y0 <= q[1] <= y1 and q not in points

    reached = _flood((x0, y0), allowed)
    box = (x1 - x0 + 1) * (y1 - y0 + 1)
    return len(reached) == box - len(points)


@dataclass(frozen=True)
class LatticeDomain:
    """Connected, simply connected finite subset of Z^2 with spacing h."""

    points: frozenset
    spacing: Fraction = Fraction(1)

    def __post_init__(self):
        pts = frozenset((int(p[0]), int(p[1])) for p in self.points)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "spacing", Fraction(self.spacing))
        if not pts:
            raise EmptyDomain("lattice domain has no points")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if not is_connected(pts):
            raise NotSimplyConnected("point set is not connected")
        if not complement_connected(pts):
            raise NotSimplyConnected("point set has holes")

    @classmethod
    def block(cls, lo: int, hi: int, spacing=Fraction(1)) -> "LatticeDomain":
        return cls(frozenset((i, j) for i in range(lo, hi + 1) for j in range(lo, hi + 1)), spacing)

    @classmethod
    def lattice_disk(cls, n: float) -> "LatticeDomain":
        """{x in Z^2 : |x| < n}."""
        r = int(math.ceil(n))
        pts = frozenset((i, j) for i in range(-r, r + 1) for j in range(-r, r + 1) if i * i + j * j < n * n)
        return cls(pts)

    @property
    def contains_origin(self) -> bool:
        return (0, 0) in self.points

    @property
    def h(self) -> float:
        return float(self.spacing)

    def __len__(self):
        return len(self.points)

    def __contains__(self, p):
        return tuple(p) in self.points

    def sorted_points(self) -> list:
        return sorted(self.points)

    def boundaries(self):
        return boundaries(self)

    def union_of_squares(self) -> "UnionOfSquaresRegion":
        return union_of_squares(self)

    def interior_neighbors(self, x) -> list:
        return [(x[0] + dx, x[1] + dy) for dx, dy in NEIGHBORS if (x[0] + dx, x[1] + dy) in self.points]

    def embed(self, pts) -> np.ndarray:
        """Integer points to complex continuum positions."""
        arr = np.asarray(list(pts), dtype=float).reshape(-1, 2)
        return (arr[:, 0] + 1j * arr[:, 1]) * self.h

    def to_text_grid(self) -> str:
        xs = [p[0] for p in self.points]
        ys = [p[1] for p in self.points]
        rows = []
        for y in range(max(ys), min(ys) - 1, -1):
            row = []
            for x in range(min(xs), max(xs) + 1):
                if (x, y) == (0, 0) and (x, y) in self.points:
                    row.append("o")
                else:
                    row.append("#" if (x, y) in self.points else ".")
            rows.append("".join(row))
        return "\n".join(rows) + "\n"

    def to_json(self) -> str:
        return json.dumps({"spacing": str(self.spacing), "points": [list(p) for p in self.sorted_points()]})

    @classmethod
    def from_json(cls, text: str) -> "LatticeDomain":
        obj = json.loads(text)
        return cls(frozenset(tuple(p) for p in obj["points"]), Fraction(obj["spacing"]))


def boundaries(A: LatticeDomain):
    """Outer boundary, inner boundary and ordered edge boundary of A."""
    pts = A.points
    outer, inner, edges = set(), set(), []
    for x in pts:
        for dx, dy in NEIGHBORS:
            y = (x[0] + dx, x[1] + dy)
            if y not in pts:
                outer.add(y)
                inner.add(x)
                edges.append((x, y))
    return frozenset(outer), frozenset(inner), tuple(sorted(edges))


def dual_segment(x, y, h=1.0) -> tuple:
    """Endpoints of the unit segment crossing edge (x, y) at its midpoint.

    Oriented so that x lies to the left, i.e. counterclockwise around A.
    """
    dx, dy = y[0] - x[0], y[1] - x[1]
    mx, my = x[0] + dx / 2, x[1] + dy / 2
    tx, ty = -dy, dx
    a = complex(mx - tx / 2, my - ty / 2) * h
    b = complex(mx + tx / 2, my + ty / 2) * h
    return a, b


def boundary_edge_cycle(A: LatticeDomain) -> tuple:
    """Edges (x, y) of the edge boundary in counterclockwise order.

    Dual segments are followed with A on the left, taking the sharpest
    right turn wherever a vertex has several continuations.
    """
    _, _, edges = boundaries(A)
    out = {}
    for e in edges:
        a, b = dual_segment(*e)
        out.setdefault(a, []).append((b, e))
    start = min(edges)
    a, b = dual_segment(*start)
    cycle = [start]
    while True:
        d_in = b - a
        best, key = None, None
        for nb, e in out[b]:
            d_out = nb - b
            turn = (d_in.conjugate() * d_out).imag
            score = -2 * turn + ((d_in.conjugate() * d_out).real > 0)
            if key is None or score > key:
                best, key = (nb, e), score
        a, (b, e) = b, best
        if e == start:
            break
        cycle.append(e)
        if len(cycle) > len(edges):
            raise NotSimplyConnected("boundary trace did not close")
    if len(cycle) != len(edges):
        raise NotSimplyConnected("edge boundary has several components")
    return tuple(cycle)


_SYMMETRIES = ((1, 0, 0, 1), (0, -1, 1, 0), (-1, 0, 0, -1), (0, 1, -1, 0),
               (-1, 0, 0, 1), (1, 0, 0, -1), (0, 1, 1, 0), (0, -1, -1, 0))


def _normalise(cells) -> tuple:
    x0 = min(c[0] for c in cells)
    y0 = min(c[1] for c in cells)
    return tuple(sorted((x - x0, y - y0) for x, y in cells))


def polyominoes(max_cells: int, free: bool = True) -> list:
    """Hole-free polyominoes with at most max_cells cells.

    With ``free`` one representative per rotation/reflection class is
    returned (the walk kernels are invariant under lattice symmetries).
    """
    layer = {((0, 0),)}
    found = []
    for size in range(1, max_cells + 1):
        if size > 1:
            nxt = set()
            for poly in layer:
                cells = set(poly)
                for x, y in poly:
                    for dx, dy in NEIGHBORS:
                        q = (x + dx, y + dy)
                        if q not in cells:
                            nxt.add(_normalise(cells | {q}))
            layer = nxt
        reps = set()
        for poly in layer:
            if free:
                poly = min(_normalise([(a * x + b * y, c * x + d * y) for x, y in poly])
                           for a, b, c, d in _SYMMETRIES)
            reps.add(poly)
        found.extend(sorted(p for p in reps if complement_connected(frozenset(p))))
    return [LatticeDomain(frozenset(p)) for p in found]


@dataclass(frozen=True)
class UnionOfSquaresRegion:
    """Interior of the union of closed squares of side h centred at h*x."""

    domain: LatticeDomain
    vertices: tuple = field(repr=False)

    @property
    def h(self) -> float:
        return self.domain.h

    @property
    def area(self) -> Fraction:
        return len(self.domain.points) * self.domain.spacing ** 2

    @property
    def squares(self) -> list:
        h = self.domain.spacing
        return [((x - Fraction(1, 2)) * h, (y - Fraction(1, 2)) * h, h) for x, y in self.domain.sorted_points()]

    def boundary_polygon(self) -> np.ndarray:
        return np.array(self.vertices, dtype=complex)

    def contains(self, z) -> np.ndarray:
        """Vectorised open-region membership."""
        z = np.atleast_1d(np.asarray(z, dtype=complex)) / self.h
        pts = self.domain.points
        out = np.empty(z.shape, dtype=bool)
        for idx, w in np.ndenumerate(z):
            xs = {math.floor(w.real + 0.5), math.ceil(w.real - 0.5)}
            ys = {math.floor(w.imag + 0.5), math.ceil(w.imag - 0.5)}
            out[idx] = all((a, b) in pts for a in xs for b in ys)
        return out

    def boundary_distance(self, z) -> np.ndarray:
        v = self.boundary_polygon()
        return _segment_distance(np.atleast_1d(np.asarray(z, dtype=complex)), v, np.roll(v, -1))


def union_of_squares(A: LatticeDomain) -> UnionOfSquaresRegion:
    """Union-of-squares region with its boundary traced counterclockwise."""
    _, _, edges = boundaries(A)
    nxt = {}
    for x, y in edges:
        a, b = dual_segment(x, y)
        key = (a.real, a.imag)
        if key in nxt:
            raise NotSimplyConnected("boundary is pinched")
        nxt[key] = (b.real, b.imag)
    start = min(nxt)
    chain = [start]
    cur = nxt[start]
    while cur != start:
        chain.append(cur)
        cur = nxt[cur]
        if len(chain) > len(nxt):
            raise NotSimplyConnected("boundary trace did not close")
    if len(chain) != len(nxt):
        raise NotSimplyConnected("boundary has several components")
    # drop collinear vertices
    verts = []
    n = len(chain)
    for i in range(n):
        p, q, r = chain[i - 1], chain[i], chain[(i + 1) % n]
        cross = (q[0] - p[0]) * (r[1] - q[1]) - (q[1] - p[1]) * (r[0] - q[0])
        if cross != 0:
            verts.append(complex(q[0], q[1]) * A.h)
    return UnionOfSquaresRegion(A, tuple(verts))


def _segment_distance(z: np.ndarray, a: np.ndarray, b: np.ndarray, chunk: int = 2048) -> np.ndarray:
    out = np.empty(z.shape, dtype=float)
    flat = z.ravel()
    res = out.ravel()
    d = b - a
    dd = np.maximum(np.abs(d) ** 2, 1e-300)
    for s in range(0, flat.size, chunk):
        w = flat[s:s + chunk, None]
        t = np.clip(((w - a) * np.conj(d)).real / dd, 0.0, 1.0)
        res[s:s + chunk] = np.min(np.abs(w - (a + t * d)), axis=1)
    return out


def _even_odd(z: np.ndarray, verts: np.ndarray) -> np.ndarray:
    x, y = z.real[..., None], z.imag[..., None]
    a, b = verts, np.roll(verts, -1)
    ax, ay, bx, by = a.real, a.imag, b.real, b.imag
    straddle = (ay > y) != (by > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = ax + (y - ay) * (bx - ax) / (by - ay)
    return np.sum(straddle & (x < xc), axis=-1) % 2 == 1


@dataclass(frozen=True)
class JordanDomainSpec:
    """A bounded Jordan domain containing the origin.

    shape is one of ``disk``, ``rectangle``, ``polygon`` or ``radial``.
    Rectangles take ``half_width`` and ``half_height`` and are centred at
    the origin; polygons take a vertex list; radial graphs take
    ``amplitude`` and ``frequency`` for r(t) = 1 + amplitude cos(frequency t).
    With ``normalize`` the domain is rescaled so that dist(0, boundary) = 1.
    """

    shape: str = "disk"
    half_width: float = 1.0
    half_height: float = 1.0
    vertices: tuple = ()
    amplitude: float = 0.0
    frequency: int = 3
    normalize: bool = True

    def __post_init__(self):
        if self.shape not in ("disk", "rectangle", "polygon", "radial"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.shape == "radial" and not 0 <= self.amplitude < 1:
            raise ValueError("radial amplitude must lie in [0, 1)")
        if self.shape == "polygon" and len(self.vertices) < 3:
            raise ValueError("polygon needs at least three vertices")

    @classmethod
    def disk(cls):
        return cls("disk")

    @classmethod
    def square(cls):
        return cls("rectangle", 1.0, 1.0)

    @property
    def scale(self) -> float:
        if not self.normalize:
            return 1.0
        if self.shape == "disk":
            return 1.0
        if self.shape == "rectangle":
            return 1.0 / min(self.half_width, self.half_height)
        if self.shape == "radial":
            return 1.0 / (1.0 - self.amplitude)
        v = np.array([complex(*p) for p in self.vertices])
        return 1.0 / float(_segment_distance(np.array([0j]), v, np.roll(v, -1))[0])

    @property
    def convex(self) -> bool:
        if self.shape in ("disk", "rectangle"):
            return True
        if self.shape == "radial":
            return self.amplitude == 0
        v = self.polygon_vertices()
        e = np.roll(v, -1) - v
        cr = (np.conj(e) * np.roll(e, -1)).imag
        return bool(np.all(cr >= 0) or np.all(cr <= 0))

    def polygon_vertices(self, n: int = 4096) -> np.ndarray:
        """Counterclockwise vertex list (a fine polyline for curved shapes)."""
        s = self.scale
        if self.shape == "rectangle":
            a, b = self.half_width * s, self.half_height * s
            return np.array([a - 1j * b, a + 1j * b, -a + 1j * b, -a - 1j * b])
        if self.shape == "polygon":
            v = np.array([complex(*p) for p in self.vertices]) * s
            area = np.sum((np.conj(v) * np.roll(v, -1)).imag)
            return v if area > 0 else v[::-1]
        t = np.linspace(0, 2 * np.pi, n, endpoint=False)
        return self.radius(t) * np.exp(1j * t)

    def radius(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.shape == "disk":
            return np.ones_like(t)
        if self.shape == "radial":
            return self.scale * (1 + self.amplitude * np.cos(self.frequency * t))
        raise ValueError("radius defined for disk and radial shapes only")

    @property
    def outer_radius(self) -> float:
        if self.shape in ("disk", "radial"):
            return float(np.max(self.radius(np.linspace(0, 2 * np.pi, 4096))))
        return float(np.max(np.abs(self.polygon_vertices())))

    def contains(self, z) -> np.ndarray:
        """Open-domain membership, vectorised over complex input."""
        z = np.asarray(z, dtype=complex)
        if self.shape == "disk":
            return np.abs(z) < 1.0
        if self.shape == "radial":
            return np.abs(z) < self.radius(np.angle(z))
        if self.shape == "rectangle":
            s = self.scale
            return (np.abs(z.real) < self.half_width * s) & (np.abs(z.imag) < self.half_height * s)
        v = self.polygon_vertices()
        inside = _even_odd(z, v)
        return inside & (self.boundary_distance(z) > 0)

    def boundary_distance(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        if self.shape == "disk":
            return np.abs(1.0 - np.abs(z))
        v = self.polygon_vertices(8192)
        return _segment_distance(z, v, np.roll(v, -1))

    def boundary_point(self, t) -> np.ndarray:
        """Boundary point in direction t (all supported shapes are star-shaped)."""
        t = np.asarray(t, dtype=float)
        u = np.exp(1j * t)
        if self.shape in ("disk", "radial"):
            return self.radius(t) * u
        if self.shape == "rectangle":
            s = self.scale
            a, b = self.half_width * s, self.half_height * s
            with np.errstate(divide="ignore"):
                r = np.minimum(a / np.abs(u.real), b / np.abs(u.imag))
            return r * u
        v = self.polygon_vertices()
        a, b = v, np.roll(v, -1)
        out = np.empty(u.shape, dtype=complex)
        for idx, w in np.ndenumerate(u):
            d = b - a
            den = (np.conj(w) * d).imag
            with np.errstate(divide="ignore", invalid="ignore"):
                s_ = (np.conj(a) * d).imag / den
                t_ = (np.conj(a) * w).imag / den
            ok = (s_ > 0) & (t_ >= 0) & (t_ <= 1)
            out[idx] = np.min(s_[ok]) * w
        return out


def _square_sample_offsets(convex: bool) -> np.ndarray:
    """Offsets (in units of h) of the test points on a square's boundary."""
    corners = [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)]
    if convex:
        return np.array([complex(*c) for c in corners])
    ts = (-0.25, 0.0, 0.25)
    pts = corners + [(t, s) for t in ts for s in (-0.5, 0.5)] + [(s, t) for t in ts for s in (-0.5, 0.5)]
    return np.array([complex(*c) for c in pts])


def inner_boundary(points) -> frozenset:
    pts = points if isinstance(points, (set, frozenset)) else set(points)
    return frozenset(x for x in pts if any((x[0] + dx, x[1] + dy) not in pts for dx, dy in NEIGHBORS))


def discretize(D: JordanDomainSpec, N: int) -> LatticeDomain:
    """The 1/N-scale discrete approximation of D, stored on the integer lattice."""
    if N < 1:
        raise ValueError("N must be positive")
    R = int(math.ceil(D.outer_radius * N)) + 1
    k = np.arange(-R, R + 1)
    X, Y = np.meshgrid(k, k, indexing="ij")
    centers = (X + 1j * Y).astype(complex)
    offsets = _square_sample_offsets(D.convex)
    ok = np.ones(centers.shape, dtype=bool)
    for off in offsets:
        ok &= D.contains((centers + off) / N)
    full = {(int(a), int(b)) for a, b in zip(X[ok], Y[ok])}
    if (0, 0) not in full:
        raise EmptyDomain(f"origin square does not fit at N={N}")
    comp = _flood((0, 0), full.__contains__)
    core = set(comp) - inner_boundary(comp)
    if not core:
        raise EmptyDomain(f"discretization is empty at N={N}")
    if (0, 0) not in core:
        raise EmptyDomain(f"origin is not interior at N={N}")
    pts = frozenset(core)
    if not is_connected(pts) or not complement_connected(pts):
        raise NotSimplyConnected(f"discretization at N={N} is not simply connected")
    return LatticeDomain(pts, Fraction(1, N))


def _in_closed_arc(theta: np.ndarray, arc: tuple) -> np.ndarray:
    a, b = arc
    width = (b - a) % (2 * np.pi)
    return ((theta - a) % (2 * np.pi)) <= width + 1e-12


def circle_distance(a, b):
    d = np.abs(np.asarray(a) - np.asarray(b)) % (2 * np.pi)
    return np.minimum(d, 2 * np.pi - d)


def arc_separation(arc1: tuple, arc2: tuple) -> float:
    """Circle distance between two closed arcs (0 if they meet)."""
    if _in_closed_arc(np.array([arc2[0], arc2[1]]), arc1).any() or _in_closed_arc(np.array([arc1[0]]), arc2).any():
        return 0.0
    ends1 = np.array(arc1)
    ends2 = np.array(arc2)
    return float(np.min(circle_distance(ends1[:, None], ends2[None, :])))


@dataclass(frozen=True)
class ArcPair:
    """Two disjoint boundary arcs tracked on four levels.

    Continuum and union-of-squares arcs are kept as ordered samples of
    boundary points; discrete arcs are sets of outer-boundary lattice points.
    ``inner_gamma``/``inner_upsilon`` hold the inner-boundary points whose
    squares meet the corresponding union-of-squares arc.
    """

    disk_arcs: tuple
    N: int
    continuum_arcs: tuple | None
    uos_arcs: tuple
    discrete_arcs: tuple
    inner_arcs: tuple

    @property
    def gamma(self) -> frozenset:
        return self.discrete_arcs[0]

    @property
    def upsilon(self) -> frozenset:
        return self.discrete_arcs[1]


def associate_arcs(D: JordanDomainSpec, N: int, disk_arcs: Sequence[tuple], riemann_map=None,
                   uos_map=None, lattice: LatticeDomain | None = None, min_sep: float | None = None,
                   samples: int = 256) -> ArcPair:
    """Carry a pair of disk arcs to D, to the union-of-squares domain and to D_N.

    ``riemann_map`` and ``uos_map`` map D and the union-of-squares region
    conformally onto the unit disk and expose ``boundary_angle(z)`` and
    ``inverse(w)``.  For the unit disk ``riemann_map`` defaults to the
    identity; ``uos_map`` defaults to a numerical map.  ``min_sep``
    defaults to the admissibility threshold at N.
    """
    g_arc, u_arc = (tuple(map(float, disk_arcs[0])), tuple(map(float, disk_arcs[1])))
    threshold = admissibility_threshold(N) if min_sep is None else min_sep
    sep = arc_separation(g_arc, u_arc)
    if sep <= 0 or sep < threshold:
        raise ArcsTooClose(f"arc separation {sep:.4f} below threshold {threshold:.4f}")
    A = lattice if lattice is not None else discretize(D, N)
    if riemann_map is None and D.shape == "disk":
        from .harmonic_continuum import ConformalMap
        riemann_map = ConformalMap.identity()
    if uos_map is None:
        from .harmonic_continuum import riemann_map_numeric
        uos_map = riemann_map_numeric(union_of_squares(A))

    def arc_samples(arc, fmap):
        width = (arc[1] - arc[0]) % (2 * np.pi)
        t = arc[0] + width * (np.arange(samples) + 0.5) / samples
        return fmap.inverse(np.exp(1j * t))

    continuum = None
    if riemann_map is not None:
        continuum = (arc_samples(g_arc, riemann_map), arc_samples(u_arc, riemann_map))
    uos = (arc_samples(g_arc, uos_map), arc_samples(u_arc, uos_map))

    _, _, edges = boundaries(A)
    h = A.h
    segs = [dual_segment(x, y, h) for x, y in edges]
    ends = np.array([[a, b, (a + b) / 2] for a, b in segs]).reshape(-1)
    ang = np.asarray(uos_map.boundary_angle(ends), dtype=float).reshape(-1, 3)
    discrete, inner = [], []
    for arc in (g_arc, u_arc):
        inside = _in_closed_arc(ang, arc)
        full = inside.all(axis=1)
        touched = inside.any(axis=1)
        inner_pts = {edges[i][0] for i in np.flatnonzero(touched)}
        outer_pts = {edges[i][1] for i in np.flatnonzero(full) if edges[i][0] in inner_pts}
        discrete.append(frozenset(outer_pts))
        inner.append(frozenset(inner_pts))
    return ArcPair((g_arc, u_arc), N, continuum, uos, tuple(discrete), tuple(inner))


@dataclass
class DomainConfig:
    shape: str = "disk"
    half_width: float = 1.0
    half_height: float = 1.0
    amplitude: float = 0.0
    frequency: int = 3
    vertices: tuple = ()
    Ns: tuple = (8, 16, 32, 64)
    arcs: tuple = ((0.0, math.pi / 2), (math.pi, 3 * math.pi / 2))

    def domain(self) -> JordanDomainSpec:
        return JordanDomainSpec(self.shape, self.half_width, self.half_height, tuple(self.vertices),
                                self.amplitude, self.frequency)


def _floats(text: str) -> list:
    return [float(s) for s in text.replace(";", ",").split(",") if s.strip()]


def read_domain_config(path) -> DomainConfig:
    """Parse ``key = value`` lines (an optional [domain] header is allowed)."""
    with open(path) as fh:
        text = fh.read()
    if not text.lstrip().startswith("["):
        text = "[domain]\n" + text
    cp = configparser.ConfigParser()
    cp.read_string(text)
    name = "domain" if cp.has_section("domain") else cp.sections()[0]
    return domain_config_from_section(cp[name])


def domain_config_from_section(sec) -> DomainConfig:
    """Build a DomainConfig from a mapping of config keys to strings."""
    cfg = DomainConfig()
    if "shape" in sec:
        cfg.shape = sec["shape"].strip()
    for key in ("half_width", "half_height", "amplitude"):
        if key in sec:
            setattr(cfg, key, float(sec[key]))
    if "frequency" in sec:
        cfg.frequency = int(sec["frequency"])
    if "vertices" in sec:
        v = _floats(sec["vertices"])
        cfg.vertices = tuple(zip(v[0::2], v[1::2]))
    if "n" in sec:
        cfg.Ns = tuple(int(x) for x in _floats(sec["n"]))
    if "arcs" in sec:
        a = _floats(sec["arcs"])
        if len(a) != 4:
            raise ValueError("arcs needs four angles")
        cfg.arcs = ((a[0], a[1]), (a[2], a[3]))
    return cfg


def points_from_iterable(pts: Iterable) -> frozenset:
    return frozenset((int(a), int(b)) for a, b in pts)
