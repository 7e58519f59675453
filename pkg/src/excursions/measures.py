"""Finite measures on curves, Prohorov distances and Brownian samplers.

Exact Prohorov distances are only available for small finite supports; on
curve ensembles we use coupling upper bounds.  The Brownian samplers are
Euler-Maruyama with boundary-adapted steps, compiled with numba.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .curve_space import Curve, concat, conformal_image, embed_discrete, metric_dd, read_curves, write_curves
from .lattice_domain import JordanDomainSpec, LatticeDomain, boundaries
from .walk_kernels import ConditionedExcursionSampler, KilledWalk, TooLarge, make_rng

EXACT_LIMIT = 14
DKW_LEVEL = 1e-3
MIN_ACCEPTANCE = 1e-4
TWO_PI = 2 * math.pi


class NoSamples(ValueError):
    pass


class StepFloorHit(RuntimeWarning):
    pass


class AcceptanceTooLow(RuntimeError):
    pass


def _child_seed(seed: int, *keys: int) -> int:
    """32-bit seed for a numba kernel, derived from (seed, keys)."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0] & 0x7FFFFFFF)


def _euclid(p, q) -> float:
    return float(abs(complex(p) - complex(q)))


# ---------------------------------------------------------------- measures

@dataclass(frozen=True, eq=False)
class FinitePointMeasure:
    """Weighted atoms in a metric space given by a distance oracle."""

    points: tuple
    weights: np.ndarray
    distance: object = None

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=float).ravel()
        if len(self.points) != w.size:
            raise ValueError("one weight per atom")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be positive")
        object.__setattr__(self, "points", tuple(self.points))
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.points)

    @property
    def total_mass(self) -> float:
        return math.fsum(self.weights)

    def normalize(self) -> "FinitePointMeasure":
        return FinitePointMeasure(self.points, self.weights / self.total_mass, self.distance)

    def scale(self, C: float) -> "FinitePointMeasure":
        if C <= 0:
            raise ValueError("scale factor must be positive")
        return FinitePointMeasure(self.points, self.weights * C, self.distance)


@dataclass(frozen=True, eq=False)
class FiniteCurveMeasure:
    curves: tuple
    weights: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=float).ravel()
        if len(self.curves) != w.size:
            raise ValueError("one weight per curve")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be positive")
        object.__setattr__(self, "curves", tuple(self.curves))
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, curves) -> "FiniteCurveMeasure":
        curves = tuple(curves)
        return cls(curves, np.full(len(curves), 1.0 / len(curves)))

    def __len__(self):
        return len(self.curves)

    @property
    def total_mass(self) -> float:
        return math.fsum(self.weights)

    def normalize(self) -> "FiniteCurveMeasure":
        return FiniteCurveMeasure(self.curves, self.weights / self.total_mass)

    def scale(self, C: float) -> "FiniteCurveMeasure":
        return scale(self, C)

    def pushforward(self, f, **kw) -> "FiniteCurveMeasure":
        return pushforward(self, f, **kw)

    def as_points(self) -> FinitePointMeasure:
        return FinitePointMeasure(self.curves, self.weights, metric_dd)

    def save(self, path) -> None:
        path = Path(path)
        write_curves(path, self.curves)
        path.with_suffix(".weights.json").write_text(json.dumps([float(w) for w in self.weights]))

    @classmethod
    def load(cls, path) -> "FiniteCurveMeasure":
        path = Path(path)
        w = json.loads(path.with_suffix(".weights.json").read_text())
        return cls(tuple(read_curves(path)), np.array(w))


def pushforward(m: FiniteCurveMeasure, f, **kw) -> FiniteCurveMeasure:
    """Image measure: every atom mapped by f, weights unchanged."""
    return FiniteCurveMeasure(tuple(conformal_image(g, f, **kw) for g in m.curves), m.weights.copy())


def scale(m: FiniteCurveMeasure, C: float) -> FiniteCurveMeasure:
    if C <= 0:
        raise ValueError("scale factor must be positive")
    return FiniteCurveMeasure(m.curves, m.weights * C)


# ---------------------------------------------------------------- Prohorov

def _subset_sums(w: np.ndarray) -> np.ndarray:
    out = np.zeros(1 << len(w))
    for k, wk in enumerate(w):
        lo = 1 << k
        out[lo:2 * lo] = out[:lo] + wk
    return out


def _max_deficit(sa: np.ndarray, sb: np.ndarray, masks: np.ndarray) -> float:
    """max over subsets S of a-atoms of m_a(S) - m_b(neighbourhood of S)."""
    cover = np.zeros(sa.size, dtype=np.int64)
    for k, mk in enumerate(masks):
        lo = 1 << k
        cover[lo:2 * lo] = cover[:lo] | mk
    return float(np.max(sa - sb[cover]))


def _masks(adj: np.ndarray) -> np.ndarray:
    bits = (1 << np.arange(adj.shape[1], dtype=np.int64))
    return (adj.astype(np.int64) * bits).sum(axis=1)


def prohorov_exact(m1: FinitePointMeasure, m2: FinitePointMeasure, distance=None) -> float:
    """Exact Prohorov distance between two finitely supported measures.

    For eps in (L_k, L_{k+1}], with L the sorted cross distances, the
    eps-neighbourhoods are fixed, so the worst mass deficit c_k is constant
    there and the infimum is max(L_k, c_k) on the first interval that
    admits it.  Deficits come from enumerating all subsets of each support.
    """
    n1, n2 = len(m1), len(m2)
    if n1 + n2 > EXACT_LIMIT:
        raise TooLarge(f"{n1 + n2} atoms exceed the subset-enumeration limit {EXACT_LIMIT}")
    dist = distance or m1.distance or _euclid
    D = np.array([[dist(p, q) for q in m2.points] for p in m1.points], dtype=float).reshape(n1, n2)
    s1, s2 = _subset_sums(m1.weights), _subset_sums(m2.weights)
    levels = np.unique(np.concatenate([[0.0], D.ravel()]))
    for k, L in enumerate(levels):
        adj = D <= L
        c = max(_max_deficit(s1, s2, _masks(adj)), _max_deficit(s2, s1, _masks(adj.T)))
        upper = levels[k + 1] if k + 1 < levels.size else math.inf
        e = max(float(L), c)
        if e <= upper:
            return e
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class CouplingBound:
    estimate: float
    bound: float
    n: int
    slack: float

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "bound": self.bound, "n": self.n, "slack": self.slack}


def _tail_fixed_point(d: np.ndarray, w: np.ndarray, slack: float) -> float:
    """inf{eps > 0 : sum w[d >= eps] + slack <= eps}."""
    order = np.argsort(d, kind="stable")
    d, w = d[order], w[order]
    # mass strictly above each candidate, from suffix sums
    suffix = np.concatenate([np.cumsum(w[::-1])[::-1], [0.0]])
    finite = d[np.isfinite(d)]
    cands = np.concatenate([[0.0, slack], finite, suffix + slack])
    cands = np.unique(cands[np.isfinite(cands) & (cands >= 0)])
    above = suffix[np.searchsorted(d, cands, side="right")]
    ok = above + slack <= cands
    return float(cands[ok][0]) if ok.any() else math.inf


def prohorov_coupling_bound(pairs=None, metric=metric_dd, distances=None, weights=None,
                            level: float = DKW_LEVEL) -> CouplingBound:
    """Prohorov upper bound from coupled samples.

    The estimate is the smallest eps with fraction{d >= eps} <= eps.  For
    empirical pairs the bound adds the one-sided DKW half-width at the given
    level.  With explicit ``weights`` the pairs are the atoms of an exact
    coupling and no slack is added.
    """
    if distances is None:
        if pairs is None:
            raise NoSamples("no pairs supplied")
        distances = [metric(a, b) for a, b in pairs]
    d = np.asarray(distances, dtype=float).ravel()
    if d.size == 0:
        raise NoSamples("no pairs supplied")
    if weights is None:
        w = np.full(d.size, 1.0 / d.size)
        slack = math.sqrt(math.log(1.0 / level) / (2 * d.size))
    else:
        w = np.asarray(weights, dtype=float).ravel()
        slack = 0.0
    est = _tail_fixed_point(d, w, 0.0)
    bound = _tail_fixed_point(d, w, slack) if slack else est
    return CouplingBound(est, bound, int(d.size), slack)


# ---------------------------------------------------------------- Brownian kernels

@njit(cache=True)
def _inside(shape, a, b, x, y):
    if shape == 0:
        return x * x + y * y < 1.0
    return abs(x) < a and abs(y) < b


@njit(cache=True)
def _bdist(shape, a, b, x, y):
    if shape == 0:
        return 1.0 - math.sqrt(x * x + y * y)
    return min(a - abs(x), b - abs(y))


@njit(cache=True)
def _project(shape, a, b, x, y):
    if shape == 0:
        r = math.sqrt(x * x + y * y)
        return x / r, y / r
    if a - abs(x) < b - abs(y):
        return math.copysign(a, x), y
    return x, math.copysign(b, y)


@njit(cache=True)
def _crossing(shape, a, b, x0, y0, x1, y1):
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _inside(shape, a, b, x0 + mid * (x1 - x0), y0 + mid * (y1 - y0)):
            lo = mid
        else:
            hi = mid
    return hi


@njit(cache=True)
def _gauss_pair(sd):
    """Two independent N(0, sd^2) variates by Box-Muller."""
    r = sd * math.sqrt(-2.0 * math.log(1.0 - np.random.random()))
    v = 2 * math.pi * np.random.random()
    return r * math.cos(v), r * math.sin(v)


@njit(cache=True)
def _em_run(shape, a, b, x, y, floor, proj, max_dt, bx, by, bt, stop=np.inf):
    """One path to the boundary.  Returns (last index, flags).

    flags bit 0: the step floor was used; bit 1: buffer exhausted (no exit);
    bit 2: stopped on reaching depth ``stop`` (no exit).
    """
    cap = bx.shape[0]
    bx[0] = x
    by[0] = y
    bt[0] = 0.0
    k = 0
    t = 0.0
    flag = 0
    while True:
        d = _bdist(shape, a, b, x, y)
        if d >= stop:
            return k, flag | 4
        dt = min(d * d / 4.0, max_dt)
        if dt < floor:
            dt = floor
            flag |= 1
        if d < proj:
            px, py = _project(shape, a, b, x, y)
            k += 1
            t += dt
            bx[k] = px
            by[k] = py
            bt[k] = t
            return k, flag
        sd = math.sqrt(dt)
        gx, gy = _gauss_pair(sd)
        nx = x + gx
        ny = y + gy
        k += 1
        if not _inside(shape, a, b, nx, ny):
            s = _crossing(shape, a, b, x, y, nx, ny)
            px, py = _project(shape, a, b, x + s * (nx - x), y + s * (ny - y))
            t += max(s, 1e-12) * dt
            bx[k] = px
            by[k] = py
            bt[k] = t
            return k, flag
        x = nx
        y = ny
        t += dt
        bx[k] = x
        by[k] = y
        bt[k] = t
        if k >= cap - 2:
            return k, flag | 2


@njit(cache=True)
def _exit_batch(seed, shape, a, b, x, y, n, floor, proj, max_dt, max_steps):
    np.random.seed(seed)
    bx = np.empty(max_steps)
    by = np.empty(max_steps)
    bt = np.empty(max_steps)
    ex = np.empty(n)
    ey = np.empty(n)
    flags = np.zeros(n, dtype=np.int64)
    for i in range(n):
        k, f = _em_run(shape, a, b, x, y, floor, proj, max_dt, bx, by, bt)
        ex[i] = bx[k]
        ey[i] = by[k]
        flags[i] = f
    return ex, ey, flags


@njit(cache=True)
def _in_arc(phi, a0, alen):
    return (phi - a0) % (2 * math.pi) <= alen


@njit(cache=True)
def _excursion_batch(seed, n_target, max_trials, eps, g0, glen, u0, ulen, floor, proj, max_dt,
                     keep, cap, max_steps):
    np.random.seed(seed)
    bx = np.empty(max_steps)
    by = np.empty(max_steps)
    bt = np.empty(max_steps)
    m = cap if keep else 1
    ox = np.empty(m)
    oy = np.empty(m)
    ot = np.empty(m)
    offsets = np.zeros(n_target + 1, dtype=np.int64)
    starts = np.empty(n_target)
    ends = np.empty(n_target)
    flags = np.zeros(n_target, dtype=np.int64)
    acc = 0
    trials = 0
    used = 0
    while acc < n_target and trials < max_trials:
        trials += 1
        th = g0 + glen * np.random.random()
        x = (1 - eps) * math.cos(th)
        y = (1 - eps) * math.sin(th)
        k, f = _em_run(0, 1.0, 1.0, x, y, floor, proj, max_dt, bx, by, bt)
        if f & 2:
            continue
        phi = math.atan2(by[k], bx[k])
        if not _in_arc(phi, u0, ulen):
            continue
        if keep:
            if used + k + 1 > cap:
                trials -= 1
                break
            ox[used:used + k + 1] = bx[:k + 1]
            oy[used:used + k + 1] = by[:k + 1]
            ot[used:used + k + 1] = bt[:k + 1]
            used += k + 1
        starts[acc] = th
        ends[acc] = phi % (2 * math.pi)
        flags[acc] = f
        acc += 1
        offsets[acc] = used
    return acc, trials, ox[:used], oy[:used], ot[:used], offsets[:acc + 1], starts[:acc], ends[:acc], flags[:acc]


@njit(cache=True)
def _wos_batch(seed, x, y, n, tol):
    np.random.seed(seed)
    out = np.empty(n)
    for i in range(n):
        px, py = x, y
        while True:
            r = 1.0 - math.sqrt(px * px + py * py)
            if r < tol:
                break
            phi = 2 * math.pi * np.random.random()
            px += r * math.cos(phi)
            py += r * math.sin(phi)
        out[i] = math.atan2(py, px) % (2 * math.pi)
    return out


# ---------------------------------------------------------------- Wiener measure

def _shape_code(D: JordanDomainSpec):
    if D.shape == "disk":
        return 0, 1.0, 1.0
    if D.shape == "rectangle":
        s = D.scale
        return 1, D.half_width * s, D.half_height * s
    return None


@dataclass(frozen=True)
class WienerPath:
    curve: Curve
    exit: complex
    floor_hit: bool


def _curve_from_buffers(bx, by, bt) -> Curve:
    pts = bx + 1j * by
    steps = np.diff(bt)
    keep = np.concatenate([[True], steps > 0])
    return Curve.from_times(bt[keep], pts[keep])


def _generic_run(D, z, rng, floor, proj, max_dt, max_steps):
    xs, ts = [complex(z)], [0.0]
    t, flag = 0.0, False
    w = complex(z)
    for _ in range(max_steps):
        d = float(D.boundary_distance(w)[0])
        dt = min(d * d / 4, max_dt)
        if dt < floor:
            dt, flag = floor, True
        if d < proj:
            w = complex(D.boundary_point(np.angle(w)))
            t += dt
            xs.append(w)
            ts.append(t)
            return xs, ts, flag
        nw = w + math.sqrt(dt) * complex(*rng.standard_normal(2))
        if not D.contains(nw):
            lo, hi = 0.0, 1.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if D.contains(w + mid * (nw - w)):
                    lo = mid
                else:
                    hi = mid
            e = w + hi * (nw - w)
            t += max(hi, 1e-12) * dt
            xs.append(complex(D.boundary_point(np.angle(e))))
            ts.append(t)
            return xs, ts, flag
        w = nw
        t += dt
        xs.append(w)
        ts.append(t)
    raise RuntimeError("Wiener path did not reach the boundary")


def sample_wiener_to_boundary(D: JordanDomainSpec, z: complex, seed: int, stream: int = 0,
                              floor: float = 1e-8, proj: float = 1e-4, max_dt: float = 1e-3,
                              max_steps: int = 2_000_000, strict: bool = False) -> WienerPath:
    """Standard complex Brownian motion from z until it leaves D.

    Steps are min(dist^2/4, max_dt) with a floor; within ``proj`` of the
    boundary the path is projected onto it.  With ``strict`` a path that
    needed the floor raises StepFloorHit instead of being flagged.
    """
    z = complex(z)
    if not D.contains(z):
        raise ValueError("start point must lie in D")
    code = _shape_code(D)
    if code is not None:
        bx, by, bt = np.empty(max_steps), np.empty(max_steps), np.empty(max_steps)
        _seed_numba(_child_seed(seed, stream))
        k, f = _em_run(code[0], code[1], code[2], z.real, z.imag, floor, proj, max_dt, bx, by, bt)
        if f & 2:
            raise RuntimeError("Wiener path did not reach the boundary")
        curve = _curve_from_buffers(bx[:k + 1], by[:k + 1], bt[:k + 1])
        hit = bool(f & 1)
    else:
        xs, ts, hit = _generic_run(D, z, make_rng(seed, stream), floor, proj, max_dt, max_steps)
        curve = _curve_from_buffers(np.real(xs), np.imag(xs), np.array(ts))
    if strict and hit:
        raise StepFloorHit("step floor reached before projection")
    return WienerPath(curve, curve.end, hit)


@njit(cache=True)
def _seed_numba(s):
    np.random.seed(s)


def wiener_exit_points(D: JordanDomainSpec, z: complex, n: int, seed: int, stream: int = 0,
                       floor: float = 1e-8, proj: float = 1e-4, max_dt: float = 1e-2) -> np.ndarray:
    """Exit positions of n independent Wiener paths from z (disk or rectangle)."""
    code = _shape_code(D)
    if code is None:
        raise NotImplementedError("batched exits are compiled for disks and rectangles")
    z = complex(z)
    ex, ey, _ = _exit_batch(_child_seed(seed, stream), code[0], code[1], code[2], z.real, z.imag,
                            n, floor, proj, max_dt, 1_000_000)
    return ex + 1j * ey


def walk_on_spheres_exit_angles(z: complex, n: int, seed: int, stream: int = 0, tol: float = 1e-6) -> np.ndarray:
    """Exit angles from the unit disk by walk on spheres (cross-check oracle)."""
    z = complex(z)
    if abs(z) >= 1:
        raise ValueError("start point must lie in the disk")
    return _wos_batch(_child_seed(seed, stream), z.real, z.imag, n, tol)


# ---------------------------------------------------------------- Brownian excursions

def _arc_start_len(arc) -> tuple:
    a, b = float(arc[0]), float(arc[1])
    length = (b - a) % TWO_PI
    if length == 0:
        raise ValueError("degenerate arc")
    return a % TWO_PI, length


@dataclass
class BrownianExcursionSample:
    curves: list | None
    start_angles: np.ndarray
    end_angles: np.ndarray
    trials: int
    eps: float
    floor_hits: int

    @property
    def acceptance(self) -> float:
        return len(self.end_angles) / max(self.trials, 1)

    def measure(self) -> FiniteCurveMeasure:
        if not self.curves:
            raise NoSamples("paths were not kept")
        return FiniteCurveMeasure.uniform(self.curves)


def sample_brownian_excursion(gamma, upsilon, eps: float, n: int, seed: int, stream: int = 0,
                              keep_paths: bool = True, max_trials: int | None = None,
                              floor: float = 1e-8, proj: float = 1e-4, max_dt: float = 1e-3,
                              chunk: int = 2000) -> BrownianExcursionSample:
    """Rejection sampler for normalised excursions of the unit disk.

    Start at (1 - eps) e^{i theta} with theta uniform on gamma (harmonic
    measure from 0 is uniform), run to the boundary and keep the path iff
    it exits in upsilon.
    """
    if not 0 < eps <= 0.1:
        raise ValueError("eps must lie in (0, 0.1]")
    g0, glen = _arc_start_len(gamma)
    u0, ulen = _arc_start_len(upsilon)
    if max_trials is None:
        max_trials = max(100 * n, int(20 * n / MIN_ACCEPTANCE))
    curves = [] if keep_paths else None
    starts, ends = [], []
    trials = hits = got = 0
    c = 0
    while got < n and trials < max_trials:
        want = min(chunk, n - got)
        cap = want * 4000 if keep_paths else 1
        acc, tr, ox, oy, ot, off, st, en, fl = _excursion_batch(
            _child_seed(seed, stream, c), want, max_trials - trials, eps, g0, glen, u0, ulen,
            floor, proj, max_dt, keep_paths, cap, 1_000_000)
        c += 1
        trials += tr
        got += acc
        hits += int(np.count_nonzero(fl & 1))
        starts.append(st)
        ends.append(en)
        if keep_paths:
            for i in range(acc):
                s, e = off[i], off[i + 1]
                curves.append(_curve_from_buffers(ox[s:e], oy[s:e], ot[s:e]))
    st = np.concatenate(starts) if starts else np.empty(0)
    en = np.concatenate(ends) if ends else np.empty(0)
    rate = en.size / max(trials, 1)
    if rate < MIN_ACCEPTANCE:
        raise AcceptanceTooLow(f"acceptance {rate:.2e} below {MIN_ACCEPTANCE:g}")
    if en.size < n:
        raise AcceptanceTooLow(f"only {en.size} of {n} excursions accepted in {trials} trials")
    return BrownianExcursionSample(curves, st, en, trials, eps, hits)


def endpoint_density_disk(gamma, upsilon, theta) -> np.ndarray:
    """Unnormalised exit density on upsilon: the integral over gamma of
    1 / (pi (1 - cos(theta - theta'))), done in closed form."""
    a, b = float(gamma[0]), float(gamma[0]) + _arc_start_len(gamma)[1]
    theta = np.asarray(theta, dtype=float)
    # antiderivative of 1/(1 - cos x) is -cot(x/2)
    F = lambda x: -1.0 / np.tan(x / 2)
    return (F((theta - a) % TWO_PI) - F((theta - b) % TWO_PI)) / math.pi


# ---------------------------------------------------------------- coupled step stream

@dataclass(frozen=True)
class StepStream:
    moves: np.ndarray
    increments: np.ndarray
    step_time: float

    @property
    def mismatch_rate(self) -> float:
        return float(np.mean(np.any(self.moves != nearest_move(self.increments), axis=1)))


MOVES = np.array([(1, 0), (0, 1), (-1, 0), (0, -1)], dtype=np.int64)


def nearest_move(z) -> np.ndarray:
    """The lattice unit step closest in direction to each increment."""
    k = np.rint(np.angle(np.asarray(z)) / (np.pi / 2)).astype(np.int64) % 4
    return MOVES[k]


def coupled_walk_bm_step_stream(seed: int, n: int, stream: int = 0, step_time: float = 2.0,
                                scale_factor: float = 1 / math.sqrt(2)) -> StepStream:
    """Walk steps paired with Gaussian increments over ``step_time``.

    The increment is standard complex Brownian motion over step_time times
    scale_factor.  The walk step is the quantile image of its argument, so
    both marginals are exact (the argument of an isotropic Gaussian is
    uniform) and the step always equals the nearest move.
    """
    rng = make_rng(seed, stream)
    g = rng.standard_normal((n, 2)) * math.sqrt(step_time) * scale_factor
    inc = g[:, 0] + 1j * g[:, 1]
    return StepStream(nearest_move(inc), inc, step_time)


# ---------------------------------------------------------------- coupled excursion pairs

@dataclass
class WalkProcess:
    """Conditioned walk excursions on N * D_N from gamma to upsilon."""

    domain: LatticeDomain
    N: int
    gamma: frozenset
    upsilon: frozenset

    def __post_init__(self):
        self.walk = KilledWalk(self.domain)
        self.sampler = ConditionedExcursionSampler(self.domain, self.upsilon, self.walk)
        self.starts = sorted(self.gamma)
        w = []
        for x in self.starts:
            nb = self.domain.interior_neighbors(x)
            w.append(0.25 * sum(self.sampler.hU[self.walk.index[z]] for z in nb))
        self.start_weights = np.array(w)
        if self.start_weights.sum() <= 0:
            raise NoSamples("no excursions from gamma to upsilon")
        self.h = 1.0 / self.N
        pts = np.array(sorted(self.domain.points))
        lo = pts.min(axis=0) - 2
        hi = pts.max(axis=0) + 2
        grid = np.zeros(tuple(hi - lo + 1), dtype=np.int8)
        grid[pts[:, 0] - lo[0], pts[:, 1] - lo[1]] = 1
        for y in self.upsilon:
            grid[y[0] - lo[0], y[1] - lo[1]] = 2
        self.grid, self.offset = grid, lo

    def sample_paths(self, n: int, rng: np.random.Generator, keep_paths: bool = True):
        """n exact excursions; returns (start indices, ends, paths)."""
        p = self.start_weights / self.start_weights.sum()
        counts = rng.multinomial(n, p)
        idx, ends, paths = [], [], []
        for i, c in enumerate(counts):
            if c == 0:
                continue
            e, ps = self.sampler.sample(self.starts[i], int(c), rng, keep_paths=keep_paths)
            idx.extend([i] * int(c))
            ends.append(e)
            if keep_paths:
                paths.extend(ps)
        return np.array(idx), np.vstack(ends), (paths if keep_paths else None)

    def curve(self, path) -> Curve:
        return embed_discrete(path, h=self.h, step_time=0.5)


@dataclass
class BrownianProcess:
    """Disk excursions from gamma to upsilon started eps inside the boundary."""

    gamma: tuple
    upsilon: tuple
    eps: float = 1e-3


@njit(cache=True)
def _embed(x1, x0, anchor, p, h, dt, signs, n):
    """Skorokhod steps of one rotated coordinate over a grid interval.

    The coordinate has variance 2 dt per interval.  Besides crossings seen
    at the grid times, a crossing of anchor +- h by the Brownian bridge in
    between is drawn with its exact probability, which keeps the walk
    clock in step with the Brownian one.
    """
    L = signs.shape[1]
    a = anchor[p]
    y0 = x0 - a
    y1 = x1 - a
    if n < L and abs(y1) < h:
        pu = math.exp(-(h - y0) * (h - y1) / dt)
        pd = math.exp(-(h + y0) * (h + y1) / dt)
        u = np.random.random()
        if u < pu:
            a += h
            signs[p, n] = 1
            n += 1
        elif u < pu + pd * (1 - pu):
            a -= h
            signs[p, n] = -1
            n += 1
    while x1 - a >= h and n < L:
        a += h
        signs[p, n] = 1
        n += 1
    while a - x1 >= h and n < L:
        a -= h
        signs[p, n] = -1
        n += 1
    anchor[p] = a
    return n


@njit(cache=True)
def _coupled_trial(seed, kind, h, sx, sy, grid0, grid1, ox, oy, u0, ulen, dt, rec, max_fine,
                   bufx, bufy, buft, lens, accepted):
    """Drive two processes with one Brownian path.

    kind 0 is a lattice walk started at integer (sx, sy), embedded in the
    rotated coordinates x + y and x - y of the Brownian path (each moves by
    +-h at its hitting times); kind 1 is the Brownian path itself started at
    (sx, sy) in the disk.  Results go into the buffers; accepted[p] is 1 when
    process p left through its target.
    """
    np.random.seed(seed)
    L = bufx.shape[1]
    done = np.zeros(2, dtype=np.bool_)
    aU = np.zeros(2)
    aV = np.zeros(2)
    su = np.zeros((2, L), dtype=np.int8)
    sv = np.zeros((2, L), dtype=np.int8)
    nu = np.zeros(2, dtype=np.int64)
    nv = np.zeros(2, dtype=np.int64)
    wx = np.zeros(2, dtype=np.int64)
    wy = np.zeros(2, dtype=np.int64)
    for p in range(2):
        accepted[p] = 0
        bufx[p, 0] = sx[p]
        bufy[p, 0] = sy[p]
        buft[p, 0] = 0.0
        lens[p] = 1
        wx[p] = int(sx[p])
        wy[p] = int(sy[p])
    sd = math.sqrt(dt)
    Bx = 0.0
    By = 0.0
    for i in range(1, max_fine + 1):
        px = Bx
        py = By
        gx, gy = _gauss_pair(sd)
        Bx += gx
        By += gy
        for p in range(2):
            if done[p]:
                continue
            if kind[p] == 1:
                x = sx[p] + Bx
                y = sy[p] + By
                if x * x + y * y >= 1.0:
                    s = _crossing(0, 1.0, 1.0, sx[p] + px, sy[p] + py, x, y)
                    ex, ey = _project(0, 1.0, 1.0, sx[p] + px + s * (Bx - px), sy[p] + py + s * (By - py))
                    k = lens[p]
                    bufx[p, k] = ex
                    bufy[p, k] = ey
                    buft[p, k] = (i - 1 + max(s, 1e-9)) * dt
                    lens[p] = k + 1
                    done[p] = True
                    if _in_arc(math.atan2(ey, ex), u0, ulen):
                        accepted[p] = 1
                elif i % rec == 0:
                    k = lens[p]
                    if k >= L - 1:
                        done[p] = True
                        continue
                    bufx[p, k] = x
                    bufy[p, k] = y
                    buft[p, k] = i * dt
                    lens[p] = k + 1
            else:
                U = Bx + By
                V = Bx - By
                nu[p] = _embed(U, px + py, aU, p, h[p], dt, su, nu[p])
                nv[p] = _embed(V, px - py, aV, p, h[p], dt, sv, nv[p])
                while not done[p]:
                    k = lens[p] - 1
                    if nu[p] <= k or nv[p] <= k:
                        break
                    a = su[p, k]
                    b = sv[p, k]
                    wx[p] += (a + b) // 2
                    wy[p] += (a - b) // 2
                    bufx[p, k + 1] = wx[p]
                    bufy[p, k + 1] = wy[p]
                    lens[p] = k + 2
                    gi = wx[p] - ox[p]
                    gj = wy[p] - oy[p]
                    g = grid0 if p == 0 else grid1
                    code = 0
                    if 0 <= gi < g.shape[0] and 0 <= gj < g.shape[1]:
                        code = g[gi, gj]
                    if code != 1:
                        done[p] = True
                        if code == 2:
                            accepted[p] = 1
                    elif lens[p] >= L - 1:
                        done[p] = True
        if done[0] and done[1]:
            return


def _escape_index(points: np.ndarray, D: JordanDomainSpec, delta: float) -> int:
    """First vertex at distance >= delta from the boundary of D, or -1."""
    inside = D.contains(points)
    ok = np.flatnonzero(inside & (D.boundary_distance(points) >= delta))
    return int(ok[0]) if ok.size else -1


@dataclass
class _Prefix:
    curve: Curve | None      # full sampled excursion, kept only when there is no escape
    head: object             # lattice path (walk) or Curve (Brownian) up to the escape vertex
    escape: complex | None   # continuum escape point
    lattice: tuple | None    # integer escape point for walks


def _walk_prefixes(proc: WalkProcess, n: int, D, delta: float, rng) -> list:
    _, _, paths = proc.sample_paths(n, rng)
    out = []
    for path in paths:
        pts = (path[:, 0] + 1j * path[:, 1]) * proc.h
        j = _escape_index(pts, D, delta)
        if j < 0:
            out.append(_Prefix(proc.curve(path), None, None, None))
        else:
            out.append(_Prefix(None, path[:j + 1], complex(pts[j]), (int(path[j, 0]), int(path[j, 1]))))
    return out


def _bm_prefixes(proc: BrownianProcess, n: int, D, delta: float, seed: int, stream: int) -> list:
    sample = sample_brownian_excursion(proc.gamma, proc.upsilon, proc.eps, n, seed, stream)
    out = []
    for g in sample.curves:
        j = _escape_index(g.points, D, delta)
        if j < 0:
            out.append(_Prefix(g, None, None, None))
        else:
            head = Curve(g.points[:j + 1], g.steps[:j]) if j > 0 else None
            out.append(_Prefix(None, head, complex(g.points[j]), None))
    return out


def _order_key(pref: _Prefix) -> float:
    z = pref.escape if pref.escape is not None else pref.curve.end
    return float(np.angle(z) % TWO_PI)


@dataclass
class CoupledPairs:
    first: list
    second: list
    distances: np.ndarray
    failed: int

    def bound(self, level: float = DKW_LEVEL) -> CouplingBound:
        return prohorov_coupling_bound(distances=self.distances, level=level)


def coupled_excursion_pairs(proc_a, proc_b, n: int, delta: float, seed: int,
                            D: JordanDomainSpec | None = None, substeps: int = 8,
                            record_every: int | None = None, max_trials: int = 2000,
                            max_time: float = 20.0) -> CoupledPairs:
    """n pairs of excursions, one from each process, with exact marginals.

    Each excursion is split at its first vertex at distance delta from the
    boundary.  Heads come from exact samplers; the two ensembles are paired
    by the angle of their escape points; from the paired escape points the
    remainders are run on one shared Brownian path (walks are embedded into
    it) and each side keeps its first run that exits through the target.
    """
    D = D or JordanDomainSpec.disk()
    if D.shape != "disk" and any(isinstance(p, BrownianProcess) for p in (proc_a, proc_b)):
        raise NotImplementedError("Brownian excursions are sampled in the unit disk")
    procs = (proc_a, proc_b)
    prefixes = []
    for k, p in enumerate(procs):
        if isinstance(p, WalkProcess):
            prefixes.append(_walk_prefixes(p, n, D, delta, make_rng(seed, 100 + k)))
        else:
            prefixes.append(_bm_prefixes(p, n, D, delta, seed, 200 + k))
        prefixes[-1].sort(key=_order_key)
    hs = [p.h for p in procs if isinstance(p, WalkProcess)]
    dt = min(hs) ** 2 / (2 * substeps) if hs else 1e-5
    rec = record_every or substeps
    max_fine = int(max_time / dt)
    L = max_fine // rec + 2
    for p in procs:
        if isinstance(p, WalkProcess):
            L = max(L, int(max_time / (0.5 * p.h * p.h)) + 2)
    L = min(L, 4_000_000)
    kind = np.array([0 if isinstance(p, WalkProcess) else 1 for p in procs], dtype=np.int64)
    h = np.array([p.h if isinstance(p, WalkProcess) else 0.0 for p in procs])
    dummy = np.zeros((1, 1), dtype=np.int8)
    grids = [p.grid if isinstance(p, WalkProcess) else dummy for p in procs]
    ox = np.array([p.offset[0] if isinstance(p, WalkProcess) else 0 for p in procs], dtype=np.int64)
    oy = np.array([p.offset[1] if isinstance(p, WalkProcess) else 0 for p in procs], dtype=np.int64)
    bm = next((p for p in procs if isinstance(p, BrownianProcess)), None)
    u0, ulen = _arc_start_len(bm.upsilon) if bm is not None else (0.0, 0.0)
    bufx = np.empty((2, L))
    bufy = np.empty((2, L))
    buft = np.empty((2, L))
    lens = np.zeros(2, dtype=np.int64)
    acc = np.zeros(2, dtype=np.int64)
    first, second, dists = [], [], []
    failed = 0
    for i in range(n):
        pre = (prefixes[0][i], prefixes[1][i])
        sx = np.zeros(2)
        sy = np.zeros(2)
        need = [pf.escape is not None for pf in pre]
        for p in range(2):
            if not need[p]:
                continue
            if kind[p] == 0:
                sx[p], sy[p] = pre[p].lattice
            else:
                sx[p], sy[p] = pre[p].escape.real, pre[p].escape.imag
        tails = [None, None]
        trial = 0
        while (need[0] and tails[0] is None) or (need[1] and tails[1] is None):
            if trial >= max_trials:
                break
            _coupled_trial(_child_seed(seed, 300, i, trial), kind, h, sx, sy, grids[0], grids[1], ox, oy,
                           u0, ulen, dt, rec, max_fine, bufx, bufy, buft, lens, acc)
            trial += 1
            for p in range(2):
                if need[p] and tails[p] is None and acc[p]:
                    m = lens[p]
                    if kind[p] == 0:
                        tails[p] = np.stack([bufx[p, :m], bufy[p, :m]], axis=1).astype(np.int64)
                    else:
                        tails[p] = _curve_from_buffers(bufx[p, :m], bufy[p, :m], buft[p, :m])
        if (need[0] and tails[0] is None) or (need[1] and tails[1] is None):
            failed += 1
            continue
        curves = []
        for p in range(2):
            pf = pre[p]
            if not need[p]:
                curves.append(pf.curve)
            elif kind[p] == 0:
                curves.append(procs[p].curve(np.vstack([pf.head, tails[p][1:]])))
            else:
                curves.append(concat(pf.head, tails[p]) if pf.head is not None else tails[p])
        first.append(curves[0])
        second.append(curves[1])
        dists.append(metric_dd(curves[0], curves[1]))
    d = np.array(dists + [math.inf] * failed)
    return CoupledPairs(first, second, d, failed)


@njit(cache=True)
def _epsilon_batch(seed, n_target, max_trials, eps_hi, eps_lo, g0, glen, u0, ulen, floor, proj, max_dt,
                   cap, max_steps):
    np.random.seed(seed)
    hx = np.empty(max_steps)
    hy = np.empty(max_steps)
    ht = np.empty(max_steps)
    tx = np.empty(max_steps)
    ty = np.empty(max_steps)
    tt = np.empty(max_steps)
    ox = np.empty(cap)
    oy = np.empty(cap)
    ot = np.empty(cap)
    heads = np.zeros(n_target + 1, dtype=np.int64)
    tails = np.zeros(n_target + 1, dtype=np.int64)
    acc = 0
    trials = 0
    used = 0
    while acc < n_target and trials < max_trials:
        trials += 1
        th = g0 + glen * np.random.random()
        x = (1 - eps_lo) * math.cos(th)
        y = (1 - eps_lo) * math.sin(th)
        k, f = _em_run(0, 1.0, 1.0, x, y, floor, proj, max_dt, hx, hy, ht, eps_hi)
        if not f & 4:
            continue
        # restart exactly at depth eps_hi on the ray through the hitting point
        r = math.sqrt(hx[k] * hx[k] + hy[k] * hy[k])
        sx = hx[k] * (1 - eps_hi) / r
        sy = hy[k] * (1 - eps_hi) / r
        m, f2 = _em_run(0, 1.0, 1.0, sx, sy, floor, proj, max_dt, tx, ty, tt, np.inf)
        if f2 & 2 or not _in_arc(math.atan2(ty[m], tx[m]), u0, ulen):
            continue
        if used + k + m + 2 > cap:
            trials -= 1
            break
        ox[used:used + k + 1] = hx[:k + 1]
        oy[used:used + k + 1] = hy[:k + 1]
        ot[used:used + k + 1] = ht[:k + 1]
        heads[acc + 1] = used + k + 1
        used += k + 1
        ox[used:used + m + 1] = tx[:m + 1]
        oy[used:used + m + 1] = ty[:m + 1]
        ot[used:used + m + 1] = tt[:m + 1]
        used += m + 1
        tails[acc + 1] = used
        acc += 1
    return acc, trials, ox[:used], oy[:used], ot[:used], heads[:acc + 1], tails[:acc + 1]


def coupled_epsilon_pairs(gamma, upsilon, eps_hi: float, eps_lo: float, n: int, seed: int,
                          stream: int = 0, max_dt: float = 1e-3, floor: float = 1e-8,
                          proj: float = 1e-4) -> CoupledPairs:
    """Disk excursions at two push-in depths sharing their Brownian path.

    The path started at depth eps_lo runs until it first reaches depth
    eps_hi; the eps_hi excursion starts on the same ray at depth exactly
    eps_hi and the shallower path is joined to it by the radial overshoot
    segment, so both are accepted together.
    """
    if not 0 < eps_lo < eps_hi <= 0.1:
        raise ValueError("need 0 < eps_lo < eps_hi <= 0.1")
    g0, glen = _arc_start_len(gamma)
    u0, ulen = _arc_start_len(upsilon)
    acc, trials, ox, oy, ot, heads, tails = _epsilon_batch(
        _child_seed(seed, stream), n, int(50 * n / MIN_ACCEPTANCE), eps_hi, eps_lo, g0, glen, u0, ulen,
        floor, proj, max_dt, n * 4000, 1_000_000)
    if acc < n:
        raise AcceptanceTooLow(f"only {acc} of {n} epsilon pairs accepted in {trials} trials")
    first, second, dists = [], [], []
    for i in range(n):
        a, b, c = tails[i], heads[i + 1], tails[i + 1]
        tail = _curve_from_buffers(ox[b:c], oy[b:c], ot[b:c])
        head = _curve_from_buffers(ox[a:b], oy[a:b], ot[a:b])
        join = Curve(np.array([head.end, tail.start]), np.array([max(ot[b - 1] - ot[b - 2], 1e-12)]))
        lo_curve = concat(concat(head, join), tail)
        first.append(tail)
        second.append(lo_curve)
        dists.append(metric_dd(tail, lo_curve))
    return CoupledPairs(first, second, np.array(dists), 0)


def tail_diameters(A: LatticeDomain, N: int, D: JordanDomainSpec, n: int, seed: int, stream: int = 0) -> np.ndarray:
    """Diameters of Brownian paths from points of the union-of-squares
    boundary of A (scaled by 1/N) to the boundary of D."""
    _, _, edges = boundaries(A)
    rng = make_rng(seed, stream)
    idx = rng.integers(0, len(edges), size=n)
    out = np.empty(n)
    for i, e in enumerate(idx):
        x, y = edges[e]
        z = (complex(*x) + complex(*y)) / 2 / N
        if not D.contains(z):
            out[i] = 0.0
            continue
        p = sample_wiener_to_boundary(D, z, seed, stream=_child_seed(seed, stream, i) & 0xFFFF_FFFF)
        out[i] = p.curve.diameter()
    return out
