"""Piecewise-linear curves with finite duration and the metrics between them.

A curve is stored as its vertices together with the duration of each
linear piece, so that concatenation and truncation at breakpoints are
exact in floating point.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from numba import njit


class EndpointMismatch(ValueError):
    pass


class BadWindow(ValueError):
    pass


class NotNearestNeighbor(ValueError):
    pass


class RangeEscapesDomain(ValueError):
    pass


class QuadratureFailure(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Curve:
    points: np.ndarray
    steps: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=complex).ravel()
        st = np.ascontiguousarray(self.steps, dtype=float).ravel()
        if pts.size != st.size + 1 or st.size == 0:
            raise ValueError("need k >= 1 pieces and k + 1 points")
        if not np.all(st > 0) or not np.all(np.isfinite(st)):
            raise ValueError("piece durations must be positive and finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "steps", st)

    @classmethod
    def from_times(cls, times, points) -> "Curve":
        times = np.asarray(times, dtype=float)
        if times[0] != 0:
            raise ValueError("times must start at 0")
        return cls(points, np.diff(times))

    @classmethod
    def segment(cls, a: complex, b: complex, duration: float = 1.0) -> "Curve":
        return cls(np.array([a, b]), np.array([duration]))

    @property
    def times(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.steps)])

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    @property
    def start(self) -> complex:
        return complex(self.points[0])

    @property
    def end(self) -> complex:
        return complex(self.points[-1])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        tt = self.times
        return np.interp(t, tt, self.points.real) + 1j * np.interp(t, tt, self.points.imag)

    def normalized(self, s):
        """gamma*(s) = gamma(t_gamma s) for s in [0, 1]."""
        return self(np.asarray(s, dtype=float) * self.duration)

    def diameter(self, a: float = 0.0, b: float | None = None) -> float:
        b = self.duration if b is None else b
        tt = self.times
        inner = self.points[(tt > a) & (tt < b)]
        pts = np.concatenate([[self(a)], inner, [self(b)]])
        return _diameter(pts)

    def equals(self, other: "Curve") -> bool:
        return (self.points.shape == other.points.shape and np.array_equal(self.points, other.points)
                and np.array_equal(self.steps, other.steps))

    def to_json(self) -> str:
        return json.dumps([[float(t), float(p.real), float(p.imag)] for t, p in zip(self.times, self.points)])

    @classmethod
    def from_json(cls, text: str) -> "Curve":
        arr = np.array(json.loads(text), dtype=float)
        return cls.from_times(arr[:, 0], arr[:, 1] + 1j * arr[:, 2])


def _diameter(pts: np.ndarray) -> float:
    pts = np.asarray(pts, dtype=complex)
    if pts.size > 64:
        from scipy.spatial import ConvexHull
        xy = np.column_stack([pts.real, pts.imag])
        try:
            pts = pts[ConvexHull(xy).vertices]
        except Exception:
            pass
    return float(np.max(np.abs(pts[:, None] - pts[None, :]))) if pts.size > 1 else 0.0


def merged_parameters(g1: Curve, g2: Curve) -> np.ndarray:
    """Union of both curves' breakpoints in normalised time s in [0, 1]."""
    s = np.concatenate([g1.times / g1.duration, g2.times / g2.duration])
    s = np.unique(np.clip(s, 0.0, 1.0))
    s[0], s[-1] = 0.0, 1.0
    return s


def metric_dd(g1: Curve, g2: Curve) -> float:
    """sup_s |g1(t1 s) - g2(t2 s)| + |t1 - t2|, exact for piecewise-linear curves.

    Between merged breakpoints the difference is affine in s, so the
    supremum of its modulus is attained at a breakpoint.
    """
    s = merged_parameters(g1, g2)
    return float(np.max(np.abs(g1.normalized(s) - g2.normalized(s))) + abs(g1.duration - g2.duration))


def linear_alignment_cost(g1: Curve, g2: Curve) -> float:
    """Cost of phi(s) = t2 s / t1 in the d_K objective (never exceeds metric_dd)."""
    s = merged_parameters(g1, g2)
    return float(np.max(np.abs(g1.normalized(s) - g2.normalized(s)) + s * abs(g1.duration - g2.duration)))


@njit(cache=True)
def _frechet_dp(p1, t1, p2, t2):
    n, m = p1.shape[0], p2.shape[0]
    F = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            c = abs(p1[i] - p2[j]) + abs(t1[i] - t2[j])
            if i == 0 and j == 0:
                best = c
            elif i == 0:
                best = F[0, j - 1]
            elif j == 0:
                best = F[i - 1, 0]
            else:
                best = min(F[i - 1, j], F[i, j - 1], F[i - 1, j - 1])
            F[i, j] = max(c, best)
    return F[n - 1, m - 1]


def _refine(s: np.ndarray, level: int) -> np.ndarray:
    for _ in range(level):
        mid = 0.5 * (s[1:] + s[:-1])
        out = np.empty(s.size + mid.size)
        out[0::2], out[1::2] = s, mid
        s = out
    return s


def metric_dK_upper(g1: Curve, g2: Curve, refine: int = 1) -> float:
    """Upper bound for d_K from monotone alignments of refined breakpoints.

    Both curves are sampled on the merged normalised breakpoints (refined by
    ``refine`` rounds of midpoint insertion).  A monotone coupling of the two
    samples, with moves (1,0), (0,1) and (1,1), defines a non-decreasing
    piecewise-linear phi; on every move both the position gap and the time
    gap are affine in the running parameter, so the cost along the move is
    the larger of its endpoint costs.  Strictly increasing perturbations
    approach that cost, hence the discrete Frechet value bounds d_K from
    above.  The diagonal coupling is phi(s) = t2 s / t1, whose cost is at
    most metric_dd.
    """
    s = _refine(merged_parameters(g1, g2), refine)
    a = g1.normalized(s)
    b = g2.normalized(s)
    ta = s * g1.duration
    tb = s * g2.duration
    return float(min(_frechet_dp(a, ta, b, tb), linear_alignment_cost(g1, g2)))


def oscillation(g: Curve, delta: float) -> float:
    """Modulus of continuity sup{|g(t) - g(s)| : |t - s| <= delta}, exact for polygons.

    On each product cell of the band 0 <= t - s <= delta the gap is affine, so
    the supremum is attained at a cell vertex: a pair of breakpoints, or a
    breakpoint paired with the point delta away.
    """
    T = g.duration
    if delta >= T:
        return g.diameter()
    if delta <= 0:
        return 0.0
    tt = g.times
    pts = g.points
    best = 0.0
    fwd = g(np.minimum(tt + delta, T))
    bwd = g(np.maximum(tt - delta, 0.0))
    best = max(best, float(np.max(np.abs(fwd - pts))), float(np.max(np.abs(bwd - pts))))
    his = np.searchsorted(tt, tt + delta, side="right")
    for i, hi in enumerate(his):
        if hi > i + 1:
            best = max(best, float(np.max(np.abs(pts[i + 1:hi] - pts[i]))))
    return best


def concat(g1: Curve, g2: Curve, tol: float = 1e-12) -> Curve:
    if abs(g1.end - g2.start) > tol:
        raise EndpointMismatch(f"|g1(end) - g2(0)| = {abs(g1.end - g2.start):.3e}")
    return Curve(np.concatenate([g1.points, g2.points[1:]]), np.concatenate([g1.steps, g2.steps]))


def truncate(g: Curve, r: float, s: float) -> Curve:
    """The restriction of g to [r, s], re-started at time 0.

    Pieces whose ends are both breakpoints of g keep their stored durations,
    so cutting at breakpoints is exact.
    """
    T = g.duration
    if not (0 <= r < s <= T):
        raise BadWindow(f"need 0 <= r < s <= {T}, got r={r}, s={s}")
    tt = g.times
    ia = int(np.searchsorted(tt, r, side="left"))
    ib = int(np.searchsorted(tt, s, side="left"))
    r_exact = tt[ia] == r
    s_exact = ib < tt.size and tt[ib] == s
    first = ia + 1 if r_exact else ia
    idx = ([ia] if r_exact else [None]) + list(range(first, ib)) + ([ib] if s_exact else [None])
    times = np.concatenate([[r], tt[first:ib], [s]])
    pts = np.array([g.points[k] if k is not None else complex(g(t)) for k, t in zip(idx, times)])
    steps = np.diff(times)
    for n in range(steps.size):
        if idx[n] is not None and idx[n + 1] == idx[n] + 1:
            steps[n] = g.steps[idx[n]]
    return Curve(pts, steps)


def brownian_scale(a: complex, g: Curve) -> Curve:
    """Psi_a g(t) = a g(|a|^-2 t)."""
    if a == 0:
        raise ValueError("scale must be nonzero")
    return Curve(a * g.points, abs(a) ** 2 * g.steps)


def phi_N(g: Curve, N: int, lattice_spacing_factor: int = 1) -> Curve:
    """Lattice-to-continuum scaling for paths on N * D_N (spacing 1/N)."""
    return brownian_scale(1.0 / (lattice_spacing_factor * N), g)


def embed_discrete(path, h: float = 1.0, step_time: float = 2.0) -> Curve:
    """Linear interpolation of a nearest-neighbour lattice path.

    omega_j is visited at time step_time * j in lattice units, then the curve
    is Brownian-scaled by h: position omega_j h at time step_time * j * h^2.
    """
    arr = np.asarray(path, dtype=np.int64).reshape(-1, 2)
    if arr.shape[0] < 2:
        raise NotNearestNeighbor("path needs at least one step")
    d = np.abs(np.diff(arr, axis=0)).sum(axis=1)
    if np.any(d != 1):
        raise NotNearestNeighbor(f"non-unit step at index {int(np.argmax(d != 1))}")
    pts = (arr[:, 0] + 1j * arr[:, 1]) * h
    return Curve(pts, np.full(arr.shape[0] - 1, step_time * h * h))


def conformal_image(g: Curve, f, pieces: int = 8, tol: float = 1e-10, max_refine: int = 6) -> Curve:
    """f(g) with the time change A_s = int_0^s |f'(g(r))|^2 dr.

    Each linear piece is split into ``pieces`` sub-intervals; A is
    integrated with composite Simpson, doubling until two successive
    levels agree to ``tol`` relative.  The image is returned as the
    polygon through f(g(t_k)) at times A(t_k).
    """
    if hasattr(f, "contains") and not np.all(f.contains(g.points)):
        raise RangeEscapesDomain("curve leaves the domain of the map")
    tt = g.times
    prev = None
    for level in range(max_refine + 1):
        m = pieces * 2 ** level
        u = np.linspace(0.0, 1.0, m + 1)
        knots = tt[:-1, None] + np.diff(tt)[:, None] * u[None, :]
        sub = np.concatenate([knots[:, :-1].ravel(), [tt[-1]]])
        z = g(sub)
        if hasattr(f, "contains") and not np.all(f.contains(z)):
            raise RangeEscapesDomain("curve leaves the domain of the map")
        mid = g(0.5 * (sub[1:] + sub[:-1]))
        w_end = np.abs(f.derivative(z)) ** 2
        w_mid = np.abs(f.derivative(mid)) ** 2
        dA = np.diff(sub) / 6.0 * (w_end[:-1] + 4 * w_mid + w_end[1:])
        total = dA.sum()
        if prev is not None and abs(total - prev) <= tol * abs(total):
            return Curve(f(z), dA)
        prev = total
    raise QuadratureFailure("time change did not converge")


_MAGIC = b"CRV1"


def write_curves(path, curves) -> None:
    """Binary columnar dump: magic, curve count, then per curve (n, duration, t[], x[], y[])."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(curves)))
        for c in curves:
            t = c.times
            fh.write(struct.pack("<Qd", t.size, c.duration))
            for col in (t, c.points.real, c.points.imag):
                fh.write(np.ascontiguousarray(col, dtype="<f8").tobytes())


def read_curves(path) -> list:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not a curve file")
        (count,) = struct.unpack("<Q", fh.read(8))
        out = []
        for _ in range(count):
            n, _dur = struct.unpack("<Qd", fh.read(16))
            cols = [np.frombuffer(fh.read(8 * n), dtype="<f8") for _ in range(3)]
            out.append(Curve.from_times(cols[0], cols[1] + 1j * cols[2]))
        return out
