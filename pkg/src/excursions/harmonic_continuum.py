"""Continuum potential theory in the plane.

Closed forms for the unit disk, a grid solver for Dirichlet problems on
union-of-squares regions, and the numerical Riemann map built from the
Green's function and its harmonic conjugate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dfield

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import integrate
from numba import njit
from scipy.spatial import cKDTree

from .lattice_domain import UnionOfSquaresRegion, circle_distance, _in_closed_arc

TWO_PI = 2 * math.pi


class CoincidentPoints(ValueError):
    pass


class CoincidentAngles(ValueError):
    pass


class ArcsOverlap(ValueError):
    pass


class MeshTooCoarse(RuntimeError):
    pass


def green_disk(x, y):
    """g(x, y) = log|(conj(y) x - 1) / (y - x)| on the unit disk."""
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    if np.any(x == y):
        raise CoincidentPoints("Green's function is infinite on the diagonal")
    out = np.log(np.abs((np.conj(y) * x - 1) / (y - x)))
    return float(out) if out.ndim == 0 else out


def poisson_disk(z, theta):
    """Density of harmonic measure from z in arc length at e^{i theta}."""
    z = np.asarray(z, dtype=complex)
    out = (1 - np.abs(z) ** 2) / (TWO_PI * np.abs(np.exp(1j * np.asarray(theta, dtype=float)) - z) ** 2)
    return float(out) if out.ndim == 0 else out


def poisson_radius(w, zeta, rho: float):
    """Poisson kernel of the disk of radius rho centred at 0, boundary point zeta."""
    w = np.asarray(w, dtype=complex)
    return (rho ** 2 - np.abs(w) ** 2) / (TWO_PI * rho * np.abs(np.asarray(zeta) - w) ** 2)


def excursion_poisson_disk(theta1, theta2):
    """1 / (2 pi (1 - cos(theta1 - theta2)))."""
    d = np.asarray(theta1, dtype=float) - np.asarray(theta2, dtype=float)
    c = 1 - np.cos(d)
    if np.any(c == 0):
        raise CoincidentAngles("excursion Poisson kernel is infinite on the diagonal")
    out = 1.0 / (TWO_PI * c)
    return float(out) if out.ndim == 0 else out


def excursion_poisson_radius(zeta1, zeta2, rho: float):
    """Excursion Poisson kernel of the disk of radius rho, boundary points zeta1, zeta2."""
    return excursion_poisson_disk(np.angle(zeta1), np.angle(zeta2)) / rho ** 2


def _arc_bounds(arc):
    a, b = float(arc[0]), float(arc[1])
    width = (b - a) % TWO_PI
    return a, a + width


def arcs_overlap(arc1, arc2) -> bool:
    a1, b1 = _arc_bounds(arc1)
    a2, b2 = _arc_bounds(arc2)
    return bool(_in_closed_arc(np.array([a2, b2]), (a1, b1)).any() or _in_closed_arc(np.array([a1]), (a2, b2)).any())


def excursion_poisson_arcs(gamma, upsilon, tol: float = 1e-10) -> float:
    """Total excursion Poisson kernel between two disjoint arcs of the unit circle."""
    if arcs_overlap(gamma, upsilon):
        raise ArcsOverlap("arcs must have disjoint closures")
    a1, b1 = _arc_bounds(gamma)
    a2, b2 = _arc_bounds(upsilon)
    # shift the second arc so that the integrand is smooth on the box
    while a2 < b1:
        a2, b2 = a2 + TWO_PI, b2 + TWO_PI
    val, err = integrate.dblquad(lambda t2, t1: excursion_poisson_disk(t1, t2), a1, b1, a2, b2,
                                 epsabs=tol, epsrel=tol)
    return float(val)


@dataclass(frozen=True)
class ArcGeometry:
    sep: float
    spr: float
    len_gamma: float
    len_upsilon: float

    @property
    def ratio(self) -> float:
        """(1 - cos spr) / (1 - cos sep)."""
        return (1 - math.cos(self.spr)) / (1 - math.cos(self.sep))

    def sandwich(self) -> tuple:
        """Lower and upper bounds for the excursion Poisson mass between the arcs."""
        num = self.len_gamma * self.len_upsilon / TWO_PI
        return num / (1 - math.cos(self.spr)), num / (1 - math.cos(self.sep))


def _disk_arcs(arcs):
    if hasattr(arcs, "disk_arcs"):
        return arcs.disk_arcs
    return arcs


def sep_spr(arcs, theta=None) -> ArcGeometry:
    """Separation and spread of two arcs measured by circle distance of boundary angles.

    ``arcs`` is an ArcPair or a pair of angle intervals.  If ``theta`` is
    given, arcs must instead be a pair of boundary point arrays and theta maps
    boundary points to angles; the extreme angles of each image are used.
    """
    if theta is not None:
        pairs = []
        for pts in arcs:
            ang = np.unwrap(np.asarray(theta(np.asarray(pts)), dtype=float))
            pairs.append((float(ang.min()), float(ang.max())))
        g, u = pairs
    else:
        g, u = _disk_arcs(arcs)
    if arcs_overlap(g, u):
        raise ArcsOverlap("arcs must have disjoint closures")
    a1, b1 = _arc_bounds(g)
    a2, b2 = _arc_bounds(u)
    e1, e2 = np.array([a1, b1]), np.array([a2, b2])
    sep = float(np.min(circle_distance(e1[:, None], e2[None, :])))
    # spread is pi as soon as some point of one arc has its antipode in the other
    if arcs_overlap((a1 + math.pi, b1 + math.pi), (a2, b2)):
        spr = math.pi
    else:
        spr = float(np.max(circle_distance(e1[:, None], e2[None, :])))
    return ArcGeometry(sep, spr, b1 - a1, b2 - a2)


def partition_arcs(arcs, eta: float, max_pieces: int = 4096) -> tuple:
    """Split both arcs into equal pieces until every piece pair has ratio <= 1 + eta."""
    g, u = _disk_arcs(arcs)
    a1, b1 = _arc_bounds(g)
    a2, b2 = _arc_bounds(u)
    n = 1
    while n <= max_pieces:
        p1 = [(a1 + (b1 - a1) * k / n, a1 + (b1 - a1) * (k + 1) / n) for k in range(n)]
        p2 = [(a2 + (b2 - a2) * k / n, a2 + (b2 - a2) * (k + 1) / n) for k in range(n)]
        if all(sep_spr((x, y)).ratio <= 1 + eta for x in p1 for y in p2):
            return p1, p2
        n *= 2
    raise ValueError("partition did not reach the requested ratio")


def log_estimate_holds(z) -> np.ndarray:
    """|log(1+z) - z| <= |z|/2, valid for |z| <= 1/2."""
    z = np.asarray(z, dtype=complex)
    return np.abs(np.log1p(z) - z) <= np.abs(z) / 2


@dataclass
class HarmonicField:
    """Solution of a Dirichlet problem on the grid delta * Z^2 restricted to a region.

    ``values`` holds the solution on interior and boundary nodes (NaN
    elsewhere).  ``conjugate`` holds the harmonic conjugate on the dual
    grid of cell centres (NaN outside).
    """

    delta: float
    offset: tuple
    values: np.ndarray = dfield(repr=False)
    interior: np.ndarray = dfield(repr=False)
    boundary: np.ndarray = dfield(repr=False)
    residual: float
    conjugate: np.ndarray | None = dfield(default=None, repr=False)

    def node(self, i, j) -> complex:
        return complex((i + self.offset[0]) * self.delta, (j + self.offset[1]) * self.delta)

    def coords(self) -> np.ndarray:
        n, m = self.values.shape
        I, J = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
        return ((I + self.offset[0]) + 1j * (J + self.offset[1])) * self.delta

    def index_of(self, z) -> tuple:
        z = np.asarray(z, dtype=complex)
        i = np.rint(z.real / self.delta - self.offset[0]).astype(np.int64)
        j = np.rint(z.imag / self.delta - self.offset[1]).astype(np.int64)
        return i, j

    def interpolate(self, z) -> np.ndarray:
        """Bilinear interpolation of the nodal values."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        x = z.real / self.delta - self.offset[0]
        y = z.imag / self.delta - self.offset[1]
        i0 = np.clip(np.floor(x).astype(np.int64), 0, self.values.shape[0] - 2)
        j0 = np.clip(np.floor(y).astype(np.int64), 0, self.values.shape[1] - 2)
        fx, fy = x - i0, y - j0
        V = self.values
        return ((1 - fx) * (1 - fy) * V[i0, j0] + fx * (1 - fy) * V[i0 + 1, j0]
                + (1 - fx) * fy * V[i0, j0 + 1] + fx * fy * V[i0 + 1, j0 + 1])

    def to_csv(self, path) -> None:
        Z = self.coords()
        mask = self.interior | self.boundary
        with open(path, "w") as fh:
            fh.write("x,y,value\n")
            for z, v in zip(Z[mask], self.values[mask]):
                fh.write(f"{z.real!r},{z.imag!r},{v!r}\n")


def _region_masks(R: UnionOfSquaresRegion, sub: int):
    """Interior and boundary node masks on the grid of spacing h / sub."""
    if sub % 2:
        raise ValueError("subdivision must be even so that cell edges are grid lines")
    pts = np.array(R.domain.sorted_points())
    cx0, cy0 = pts.min(axis=0) - 1
    cx1, cy1 = pts.max(axis=0) + 1
    cells = np.zeros((cx1 - cx0 + 1, cy1 - cy0 + 1), dtype=bool)
    cells[pts[:, 0] - cx0, pts[:, 1] - cy0] = True
    half = sub // 2
    kx = np.arange(cx0 * sub, cx1 * sub + 1)
    ky = np.arange(cy0 * sub, cy1 * sub + 1)

    def cand(k, c0):
        lo = -((-(k - half)) // sub)  # ceil((k - half) / sub)
        hi = (k + half) // sub
        return lo - c0, hi - c0

    lx, hx = cand(kx, cx0)
    ly, hy = cand(ky, cy0)
    inside = (cells[np.ix_(lx, ly)] & cells[np.ix_(lx, hy)] & cells[np.ix_(hx, ly)] & cells[np.ix_(hx, hy)])
    touch = (cells[np.ix_(lx, ly)] | cells[np.ix_(lx, hy)] | cells[np.ix_(hx, ly)] | cells[np.ix_(hx, hy)])
    return inside, touch & ~inside, (int(kx[0]), int(ky[0]))


def solve_dirichlet(R: UnionOfSquaresRegion, boundary_fn, subdivision: int = 8) -> HarmonicField:
    """5-point discrete harmonic extension of boundary_fn into R on the grid h / subdivision."""
    inside, bnd, offset = _region_masks(R, subdivision)
    delta = R.h / subdivision
    n, m = inside.shape
    I, J = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    Z = ((I + offset[0]) + 1j * (J + offset[1])) * delta
    vals = np.full((n, m), np.nan)
    vals[bnd] = boundary_fn(Z[bnd])
    num = -np.ones((n, m), dtype=np.int64)
    k = int(inside.sum())
    num[inside] = np.arange(k)
    II, JJ = np.nonzero(inside)
    idx = num[II, JJ]
    rows, cols, data = [idx], [idx], [np.full(k, 4.0)]
    rhs = np.zeros(k)
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        n2 = num[II + di, JJ + dj]
        ok = n2 >= 0
        rows.append(idx[ok]); cols.append(n2[ok]); data.append(np.full(ok.sum(), -1.0))
        rhs[idx[~ok]] += vals[II[~ok] + di, JJ[~ok] + dj]
    M = sp.csc_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(k, k))
    sol = spla.spsolve(M, rhs, permc_spec="MMD_AT_PLUS_A") if k < 4000 else _solve_large(M, rhs)
    scale = max(1.0, float(np.max(np.abs(rhs))))
    residual = float(np.max(np.abs(M @ sol - rhs))) / scale
    vals[inside] = sol
    return HarmonicField(delta, offset, vals, inside, bnd, residual)


def _solve_large(M, rhs):
    return spla.splu(M, permc_spec="COLAMD").solve(rhs)


def _conjugate(field_: HarmonicField) -> np.ndarray:
    """Harmonic conjugate on cell centres from discrete Cauchy-Riemann increments.

    Face (i, j) is the cell with lower-left node (i, j).  Crossing the
    primal edge between nodes p and p + e_x upwards adds u(p + e_x) - u(p);
    crossing the edge between p and p + e_y to the left adds u(p + e_y) - u(p).
    Closedness around each node is exactly the discrete Laplace equation.
    """
    u = field_.values
    known = field_.interior | field_.boundary
    n, m = u.shape
    face_ok = known[:-1, :-1] & known[1:, :-1] & known[:-1, 1:] & known[1:, 1:]
    # a face belongs to the region if its centre is inside: at least one corner interior
    face_ok &= (field_.interior[:-1, :-1] | field_.interior[1:, :-1] | field_.interior[:-1, 1:]
                | field_.interior[1:, 1:])
    fi, fj = np.nonzero(face_ok)
    if fi.size == 0:
        return np.full((n - 1, m - 1), np.nan)
    # breadth-first integration from the face nearest the origin
    i0, j0 = field_.index_of(0j)
    start = int(np.argmin((fi - (i0 - 0.5)) ** 2 + (fj - (j0 - 0.5)) ** 2))
    return _integrate_faces(u, face_ok, int(fi[start]), int(fj[start]))


@njit(cache=True)
def _integrate_faces(u, face_ok, si, sj):
    n, m = face_ok.shape
    v = np.full((n, m), np.nan)
    qi = np.empty(n * m, dtype=np.int64)
    qj = np.empty(n * m, dtype=np.int64)
    v[si, sj] = 0.0
    qi[0], qj[0] = si, sj
    head, tail = 0, 1
    while head < tail:
        i, j = qi[head], qj[head]
        head += 1
        base = v[i, j]
        # up: crossing the horizontal edge between nodes (i, j+1) and (i+1, j+1)
        if j + 1 < m and face_ok[i, j + 1] and np.isnan(v[i, j + 1]):
            v[i, j + 1] = base + (u[i + 1, j + 1] - u[i, j + 1])
            qi[tail], qj[tail] = i, j + 1
            tail += 1
        if j - 1 >= 0 and face_ok[i, j - 1] and np.isnan(v[i, j - 1]):
            v[i, j - 1] = base - (u[i + 1, j] - u[i, j])
            qi[tail], qj[tail] = i, j - 1
            tail += 1
        # left: crossing the vertical edge between nodes (i, j) and (i, j+1)
        if i - 1 >= 0 and face_ok[i - 1, j] and np.isnan(v[i - 1, j]):
            v[i - 1, j] = base + (u[i, j + 1] - u[i, j])
            qi[tail], qj[tail] = i - 1, j
            tail += 1
        if i + 1 < n and face_ok[i + 1, j] and np.isnan(v[i + 1, j]):
            v[i + 1, j] = base - (u[i + 1, j + 1] - u[i + 1, j])
            qi[tail], qj[tail] = i + 1, j
            tail += 1
    return v


def conjugate_defect(field_: HarmonicField) -> float:
    """Largest failure of the conjugate increments to close around interior nodes."""
    u, v = field_.values, field_.conjugate
    n, m = u.shape
    worst = 0.0
    I, J = np.nonzero(field_.interior)
    ok = (I > 0) & (J > 0) & (I < n - 1) & (J < m - 1)
    I, J = I[ok], J[ok]
    # faces around node (i, j): (i-1, j-1), (i, j-1), (i, j), (i-1, j)
    f = [v[I - 1, J - 1], v[I, J - 1], v[I, J], v[I - 1, J]]
    if any(np.isnan(x).any() for x in f):
        return float("inf")
    # going counterclockwise around node: crossing the right, top, left, bottom half-edges
    d1 = f[1] - f[0] - (-(u[I, J] - u[I, J - 1]))  # left of edge (I,J-1)-(I,J): v(left)-v(right) = du
    d2 = f[2] - f[1] - (u[I + 1, J] - u[I, J])
    d3 = f[3] - f[2] - (u[I, J + 1] - u[I, J])
    d4 = f[0] - f[3] - (-(u[I, J] - u[I - 1, J]))
    worst = float(np.max(np.abs(d1 + d2 + d3 + d4))) if I.size else 0.0
    return worst


class ConformalMap:
    """Conformal map with derivative and inverse evaluators.

    Kinds: ``identity``, ``rotation`` (angle), ``mobius`` (alpha),
    ``scaling`` (a) and ``grid`` (numerical map of a union-of-squares region
    onto the unit disk).
    """

    def __init__(self, kind: str, param=None, field_=None):
        self.kind = kind
        self.param = param
        self.field = field_

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def rotation(cls, angle: float):
        return cls("rotation", float(angle))

    @classmethod
    def mobius(cls, alpha: float):
        return cls("mobius", float(alpha))

    @classmethod
    def scaling(cls, a: complex):
        return cls("scaling", complex(a))

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        if self.kind == "identity":
            return z.copy()
        if self.kind == "rotation":
            return np.exp(1j * self.param) * z
        if self.kind == "mobius":
            a = self.param
            return (z - a) / (1 - a * z)
        if self.kind == "scaling":
            return self.param * z
        return self.field.evaluate(z)

    def derivative(self, z):
        z = np.asarray(z, dtype=complex)
        if self.kind == "identity":
            return np.ones_like(z)
        if self.kind == "rotation":
            return np.full_like(z, np.exp(1j * self.param))
        if self.kind == "mobius":
            a = self.param
            return (1 - a * a) / (1 - a * z) ** 2
        if self.kind == "scaling":
            return np.full_like(z, self.param)
        return self.field.derivative(z)

    def inverse(self, w):
        w = np.asarray(w, dtype=complex)
        if self.kind == "identity":
            return w.copy()
        if self.kind == "rotation":
            return np.exp(-1j * self.param) * w
        if self.kind == "mobius":
            a = self.param
            return (w + a) / (1 + a * w)
        if self.kind == "scaling":
            return w / self.param
        return self.field.inverse(w)

    def contains(self, z):
        z = np.asarray(z, dtype=complex)
        if self.kind == "grid":
            return self.field.region.contains(z)
        return np.abs(z) < 1

    def boundary_angle(self, z):
        """Continuous boundary angle theta(z) for points of the domain boundary."""
        if self.kind == "grid":
            return self.field.boundary_angle(z)
        return np.angle(self(z))

    @property
    def derivative_at_origin(self) -> complex:
        return complex(self.derivative(np.array([0j]))[0])


@dataclass
class GridRiemannMap:
    """F(z) = z exp(-(u + i v)) from the boundary problem u = log|z| and its conjugate v."""

    region: UnionOfSquaresRegion
    field: HarmonicField = dfield(repr=False)
    v_nodes: np.ndarray = dfield(repr=False)
    boundary_nodes: np.ndarray = dfield(repr=False)
    boundary_theta: np.ndarray = dfield(repr=False)
    residual: float = 0.0
    defect: float = 0.0

    @property
    def derivative_at_origin(self) -> float:
        i, j = self.field.index_of(0j)
        return float(math.exp(-self.field.values[i, j]))

    @property
    def conformal_radius(self) -> float:
        return 1.0 / self.derivative_at_origin

    def green(self, z) -> np.ndarray:
        """g(0, z) = u(z) - log|z| by bilinear interpolation of u."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        with np.errstate(divide="ignore"):
            return self.field.interpolate(z) - np.log(np.abs(z))

    def node_values(self) -> tuple:
        """(z, F(z)) on all interior nodes."""
        Z = self.field.coords()
        mask = self.field.interior
        z = Z[mask]
        phi = self.field.values[mask] + 1j * self.v_nodes[mask]
        return z, z * np.exp(-phi)

    def evaluate(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        u = self.field.interpolate(z)
        v = _bilinear(self.v_nodes, self.field, z)
        return z * np.exp(-(u + 1j * v))

    def derivative(self, z, eps: float | None = None) -> np.ndarray:
        eps = eps or self.field.delta
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        return (self.evaluate(z + eps) - self.evaluate(z - eps)) / (2 * eps)

    def boundary_angle(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        tree = cKDTree(np.column_stack([self.boundary_nodes.real, self.boundary_nodes.imag]))
        d, k = tree.query(np.column_stack([z.real, z.imag]), k=2)
        # linear interpolation between the two nearest boundary nodes
        w = d[:, 0] / np.maximum(d[:, 0] + d[:, 1], 1e-300)
        t0 = self.boundary_theta[k[:, 0]]
        t1 = self.boundary_theta[k[:, 1]]
        t1 = t0 + np.angle(np.exp(1j * (t1 - t0)))
        return t0 + w * (t1 - t0)

    def inverse(self, w, iters: int = 50) -> np.ndarray:
        """Preimage of w: boundary interpolation for |w| = 1, Newton iteration inside."""
        w = np.atleast_1d(np.asarray(w, dtype=complex))
        out = np.empty_like(w)
        on = np.abs(np.abs(w) - 1) < 1e-12
        if on.any():
            th = np.unwrap(self.boundary_theta)
            base = th[0]
            order = np.argsort(th)
            tq = (np.angle(w[on]) - base) % TWO_PI + base
            ths = th[order]
            nodes = self.boundary_nodes[order]
            ext_t = np.concatenate([ths[-1:] - TWO_PI, ths, ths[:1] + TWO_PI])
            ext_z = np.concatenate([nodes[-1:], nodes, nodes[:1]])
            out[on] = np.interp(tq, ext_t, ext_z.real) + 1j * np.interp(tq, ext_t, ext_z.imag)
        inner = ~on
        if inner.any():
            z = w[inner] * self.conformal_radius
            for _ in range(iters):
                step = (self.evaluate(z) - w[inner]) / self.derivative(z)
                z = z - step
                if np.max(np.abs(step)) < 1e-13:
                    break
            out[inner] = z
        return out


def _bilinear(grid: np.ndarray, f: HarmonicField, z: np.ndarray) -> np.ndarray:
    x = z.real / f.delta - f.offset[0]
    y = z.imag / f.delta - f.offset[1]
    i0 = np.clip(np.floor(x).astype(np.int64), 0, grid.shape[0] - 2)
    j0 = np.clip(np.floor(y).astype(np.int64), 0, grid.shape[1] - 2)
    fx, fy = x - i0, y - j0
    return ((1 - fx) * (1 - fy) * grid[i0, j0] + fx * (1 - fy) * grid[i0 + 1, j0]
            + (1 - fx) * fy * grid[i0, j0 + 1] + fx * fy * grid[i0 + 1, j0 + 1])


def _boundary_cycle(R: UnionOfSquaresRegion, f: HarmonicField) -> np.ndarray:
    """Boundary nodes of the grid, counterclockwise, starting at the polygon's first vertex."""
    verts = R.boundary_polygon()
    d = f.delta
    pts = []
    for a, b in zip(verts, np.roll(verts, -1)):
        n = int(round(abs(b - a) / d))
        t = np.arange(n) / n
        pts.append(a + (b - a) * t)
    return np.concatenate(pts)


def riemann_map_numeric(R: UnionOfSquaresRegion, subdivision: int = 8, tol: float = 1e-8) -> ConformalMap:
    """Normalised conformal map of R onto the unit disk.

    Solves u = log|z| on the boundary, so g(0, z) = u(z) - log|z|; the
    conjugate v of u is integrated on the dual grid and the map is
    F(z) = z exp(-(u + i v)), with v(0) = 0 so that F'(0) = exp(-u(0)) > 0.
    """
    if not R.contains(0j)[0]:
        raise ValueError("region must contain the origin")
    with np.errstate(divide="ignore"):
        fld = solve_dirichlet(R, lambda z: np.log(np.abs(z)), subdivision)
    if fld.residual > tol:
        raise MeshTooCoarse(f"Dirichlet residual {fld.residual:.2e}")
    v = _conjugate(fld)
    fld.conjugate = v
    defect = conjugate_defect(fld)
    if not np.isfinite(defect) or defect > 1e-6:
        raise MeshTooCoarse(f"conjugate path dependence {defect:.2e}")
    n, m = fld.values.shape
    # nodal conjugate: mean of the available surrounding faces
    pad = np.full((n + 1, m + 1), np.nan)
    pad[1:-1, 1:-1] = v
    stack = np.stack([pad[:-1, :-1], pad[1:, :-1], pad[:-1, 1:], pad[1:, 1:]])
    cnt = np.sum(~np.isnan(stack), axis=0)
    with np.errstate(invalid="ignore"):
        vnode = np.where(cnt > 0, np.nansum(stack, axis=0) / np.maximum(cnt, 1), np.nan)
    # face-centre offsets for boundary nodes, corrected by the known gradient of the conjugate
    Z = fld.coords()
    offs = np.array([-0.5 - 0.5j, 0.5 - 0.5j, -0.5 + 0.5j, 0.5 + 0.5j]) * fld.delta
    present = ~np.isnan(stack)
    with np.errstate(invalid="ignore", divide="ignore"):
        cbar = np.tensordot(offs, present, axes=(0, 0)) / np.maximum(cnt, 1)
        corr = np.imag(np.conj(Z) * cbar) / np.abs(Z) ** 2
    bmask = fld.boundary & (cnt > 0)
    vnode[bmask] = vnode[bmask] - corr[bmask]
    i0, j0 = fld.index_of(0j)
    vnode = vnode - vnode[i0, j0]
    bz = _boundary_cycle(R, fld)
    bi, bj = fld.index_of(bz)
    vb = vnode[bi, bj]
    if np.isnan(vb).any():
        raise MeshTooCoarse("boundary node without an adjacent cell")
    theta = np.unwrap(np.angle(bz)) - vb
    gm = GridRiemannMap(R, fld, vnode, bz, theta, fld.residual, defect)
    return ConformalMap("grid", None, gm)


def boundary_winding(cmap: ConformalMap) -> float:
    """Total change of the boundary angle once around the boundary."""
    th = cmap.field.boundary_theta
    return float(np.sum(np.angle(np.exp(1j * np.diff(np.concatenate([th, th[:1]]))))))


def rectangle_green(z, w, a: float, b: float, tol: float = 1e-12, max_terms: int = 100000) -> float:
    """g(z, w) on (-a, a) x (-b, b), normalised so g ~ -log|z - w|.

    The double sine series is summed in closed form along one direction,
    leaving a single series in the other; the direction is chosen so that
    the terms decay geometrically.
    """
    z, w = complex(z), complex(w)
    if z == w:
        raise CoincidentPoints("Green's function is infinite on the diagonal")
    x1, y1, x2, y2 = z.real + a, z.imag + b, w.real + a, w.imag + b
    A, B = 2 * a, 2 * b
    if abs(y1 - y2) < abs(x1 - x2):
        x1, y1, x2, y2, A, B = y1, x1, y2, x2, B, A
    lo, hi = min(y1, y2), max(y1, y2)
    total = 0.0
    for m in range(1, max_terms):
        k = m * math.pi / A
        # sinh(k lo) sinh(k (B - hi)) / sinh(k B), written with exponentials for stability
        e = (math.exp(k * (lo - hi)) * (1 - math.exp(-2 * k * lo)) * (1 - math.exp(-2 * k * (B - hi)))
             / (2 * (1 - math.exp(-2 * k * B))))
        term = (2 / A) * math.sin(k * x1) * math.sin(k * x2) * e / k
        total += term
        if abs(e / k) < tol:
            break
    return TWO_PI * total


def _field_deviation(gm: GridRiemannMap, F, r: float) -> float:
    z, w = gm.node_values()
    keep = np.abs(w) <= r
    if not keep.any():
        return float("nan")
    return float(np.max(np.abs(F(z[keep]) - w[keep])))


def cara_report(D, Ns, radii=(0.3, 0.5, 0.7), reference=None, subdivision: int = 8,
                maps: dict | None = None) -> list:
    """sup_{|w| <= r} |F(f_N(w)) - w| for the map f_N of each union-of-squares domain.

    F is the normalised map of D onto the disk (identity for the unit disk,
    otherwise ``reference`` or a fine grid map).  The supremum is taken over
    grid nodes z of the N-th region with |F_N(z)| <= r, where w = F_N(z).
    ``maps`` may supply precomputed (A, map) pairs keyed by N.
    """
    from .lattice_domain import discretize, union_of_squares
    if reference is None:
        reference = reference_map(D)
    rows = []
    for N in Ns:
        if maps is not None and N in maps:
            A, cm = maps[N]
        else:
            A = discretize(D, N)
            cm = riemann_map_numeric(union_of_squares(A), subdivision)
        row = {"N": N, "points": len(A), "fprime0": cm.field.derivative_at_origin}
        for r in radii:
            row[f"r={r}"] = _field_deviation(cm.field, reference, r)
        rows.append(row)
    return rows


def reference_map(D, cells: int = 64, subdivision: int = 4) -> ConformalMap:
    """Normalised map of D onto the disk: exact for the disk, a fine grid map for rectangles."""
    if D.shape == "disk":
        return ConformalMap.identity()
    if D.shape == "rectangle":
        from fractions import Fraction
        from .lattice_domain import LatticeDomain, union_of_squares
        s = D.scale
        a, b = D.half_width * s, D.half_height * s
        if abs(a - b) > 1e-12:
            raise NotImplementedError("reference maps are provided for squares only")
        h = Fraction(2 * a).limit_denominator(10 ** 6) / (2 * cells + 1)
        block = LatticeDomain.block(-cells, cells, h)
        return riemann_map_numeric(union_of_squares(block), subdivision)
    raise NotImplementedError(f"no reference map for shape {D.shape!r}")


def pushforward_kernel_check(f: ConformalMap, samples: int = 100, seed: int = 0) -> dict:
    """Residuals of the covariance rules for the Poisson and excursion Poisson kernels.

    The source domain is the unit disk; f maps it onto a disk of radius rho
    (rho = |a| for scalings, 1 otherwise).  Returns the largest relative
    residual for each kernel and the observed scale factors.
    """
    rng = np.random.default_rng(seed)
    rho = abs(f.param) if f.kind == "scaling" else 1.0
    r = np.sqrt(rng.random(samples)) * 0.95
    x = r * np.exp(1j * rng.uniform(0, TWO_PI, samples))
    t1 = rng.uniform(0, TWO_PI, samples)
    t2 = t1 + rng.uniform(0.1, TWO_PI - 0.1, samples)
    y1, y2 = np.exp(1j * t1), np.exp(1j * t2)
    lhs_p = poisson_disk(x, t1)
    rhs_p = np.abs(f.derivative(y1)) * poisson_radius(f(x), f(y1), rho)
    lhs_e = excursion_poisson_disk(t1, t2)
    rhs_e = np.abs(f.derivative(y1)) * np.abs(f.derivative(y2)) * excursion_poisson_radius(f(y1), f(y2), rho)
    return {
        "poisson": float(np.max(np.abs(lhs_p - rhs_p) / lhs_p)),
        "excursion": float(np.max(np.abs(lhs_e - rhs_e) / lhs_e)),
        "poisson_scale": float(np.median(poisson_radius(f(x), f(y1), rho) / lhs_p)),
        "excursion_scale": float(np.median(excursion_poisson_radius(f(y1), f(y2), rho) / lhs_e)),
    }
