"""Random-walk potential theory on finite lattice domains.

All quantities are for simple random walk on Z^2 killed on leaving a
finite set A.  Linear algebra goes through a single factorisation of
I - Q, where Q is the killed transition matrix.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice_domain import NEIGHBORS, LatticeDomain, boundaries

# (2 * Euler's constant + 3 log 2) / pi
K0 = (2 * np.euler_gamma + 3 * math.log(2)) / math.pi

DENSE_LIMIT = 4000
RESIDUAL_TOL = 1e-10


class SolverFailure(RuntimeError):
    pass


class TooLarge(ValueError):
    pass


class ZeroMeasure(ValueError):
    pass


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator; distinct streams never overlap."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def potential_asymptotic(x) -> np.ndarray:
    """(2/pi) log|x| + K0."""
    r = np.abs(np.asarray(x, dtype=complex))
    return 2 / math.pi * np.log(r) + K0


@dataclass(frozen=True)
class PotentialKernelTable:
    radius: int
    values: np.ndarray = field(repr=False)
    k0: float = K0

    def __call__(self, x, y=None):
        if y is None:
            x, y = x
        x, y = abs(int(x)), abs(int(y))
        if max(x, y) > self.radius:
            raise KeyError(f"({x}, {y}) outside table radius {self.radius}")
        return float(self.values[x + self.radius, y + self.radius])

    def grid(self) -> np.ndarray:
        return self.values

    def k(self, x, y=None) -> float:
        """k_x = K0 + (2/pi) log|x| - a(x), the local correction to the asymptotics."""
        if y is None:
            x, y = x
        return K0 + 2 / math.pi * math.log(math.hypot(x, y)) - self(x, y)


def potential_kernel(radius: int, box_half_side: int | None = None) -> PotentialKernelTable:
    """Potential kernel a(x) for |x|_inf <= radius.

    Solves the discrete equation Delta a = delta_0, a(0) = 0, on a square box
    of half-side at least 2 * radius, with the logarithmic asymptotics as
    boundary data.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    L = box_half_side or max(2 * radius, 256)
    n = 2 * L + 1
    ii, jj = np.meshgrid(np.arange(-L, L + 1), np.arange(-L, L + 1), indexing="ij")
    interior = (np.abs(ii) < L) & (np.abs(jj) < L)
    interior[L, L] = False
    bnd = ~((np.abs(ii) < L) & (np.abs(jj) < L))
    known = np.zeros((n, n))
    known[bnd] = potential_asymptotic(ii[bnd] + 1j * jj[bnd])
    num = -np.ones((n, n), dtype=np.int64)
    m = int(interior.sum())
    num[interior] = np.arange(m)
    rows, cols, vals = [], [], []
    rhs = np.zeros(m)
    I, J = np.nonzero(interior)
    k = num[I, J]
    rows.append(k); cols.append(k); vals.append(np.ones(m))
    for di, dj in NEIGHBORS:
        I2, J2 = I + di, J + dj
        k2 = num[I2, J2]
        inner = k2 >= 0
        rows.append(k[inner]); cols.append(k2[inner]); vals.append(np.full(inner.sum(), -0.25))
        rhs[k[~inner]] += 0.25 * known[I2[~inner], J2[~inner]]
    M = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))
    sol = spla.splu(M).solve(rhs)
    res = np.max(np.abs(M @ sol - rhs))
    if res > RESIDUAL_TOL:
        raise SolverFailure(f"potential kernel residual {res:.2e}")
    full = known.copy()
    full[interior] = sol
    full[L, L] = 0.0
    table = full[L - radius:L + radius + 1, L - radius:L + radius + 1].copy()
    return PotentialKernelTable(radius, table)


def potential_kernel_diagonal(n: int) -> float:
    """Closed form a(n, n) = (4/pi) * sum_{k<=n} 1/(2k-1)."""
    return 4 / math.pi * sum(1.0 / (2 * k - 1) for k in range(1, n + 1))


def harmonicity_residual(table: PotentialKernelTable, radius: int | None = None) -> float:
    """max |neighbour average - a(x)| over 0 < |x|_inf <= radius (default: table radius - 1)."""
    a = table.values
    R = table.radius
    r = min(radius, R - 1) if radius else R - 1
    avg = 0.25 * (a[2:, 1:-1] + a[:-2, 1:-1] + a[1:-1, 2:] + a[1:-1, :-2])
    lap = avg - a[1:-1, 1:-1]
    ii, jj = np.meshgrid(np.arange(-R + 1, R), np.arange(-R + 1, R), indexing="ij")
    mask = (np.maximum(np.abs(ii), np.abs(jj)) <= r) & ((ii != 0) | (jj != 0))
    return float(np.max(np.abs(lap[mask])))


class KilledWalk:
    """Factorised I - Q for walk killed on leaving A."""

    def __init__(self, A: LatticeDomain):
        self.domain = A
        self.points = A.sorted_points()
        self.index = {p: i for i, p in enumerate(self.points)}
        outer, inner, edges = boundaries(A)
        self.outer = sorted(outer)
        self.outer_index = {p: i for i, p in enumerate(self.outer)}
        self.inner = inner
        self.edges = edges
        n = len(self.points)
        rows, cols = [], []
        brow, bcol = [], []
        for i, (x, y) in enumerate(self.points):
            for dx, dy in NEIGHBORS:
                q = (x + dx, y + dy)
                j = self.index.get(q)
                if j is None:
                    brow.append(i); bcol.append(self.outer_index[q])
                else:
                    rows.append(i); cols.append(j)
        self.Q = sp.csr_matrix((np.full(len(rows), 0.25), (rows, cols)), shape=(n, n))
        self.B = sp.csr_matrix((np.full(len(brow), 0.25), (brow, bcol)), shape=(n, len(self.outer)))
        self.M = (sp.identity(n, format="csc") - self.Q).tocsc()
        self.dense = n <= DENSE_LIMIT
        if self.dense:
            self._lu = la.lu_factor(self.M.toarray())
        else:
            self._lu = spla.splu(self.M)

    def __len__(self):
        return len(self.points)

    def solve(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs.toarray() if sp.issparse(rhs) else rhs, dtype=float)
        x = la.lu_solve(self._lu, rhs) if self.dense else self._lu.solve(rhs)
        res = np.max(np.abs(self.M @ x - rhs)) if x.size else 0.0
        if not np.isfinite(res) or res > RESIDUAL_TOL:
            raise SolverFailure(f"linear solve residual {res:.2e} exceeds {RESIDUAL_TOL}")
        return x

    def green_column(self, y) -> np.ndarray:
        """G_A(., y) as a vector over the sorted points of A (G is symmetric)."""
        e = np.zeros(len(self))
        e[self.index[tuple(y)]] = 1.0
        return self.solve(e)

    def green(self, x, y) -> float:
        return float(self.green_column(y)[self.index[tuple(x)]])

    def green_matrix(self) -> np.ndarray:
        if not self.dense:
            raise TooLarge(f"dense Green matrix requested for {len(self)} points")
        return self.solve(np.eye(len(self)))

    def exit_probabilities(self, targets=None) -> np.ndarray:
        """h_A(x, y) for x in A and y in targets (default: all of the outer boundary)."""
        B = self.B if targets is None else self.B[:, [self.outer_index[tuple(t)] for t in targets]]
        return self.solve(B)

    def exit_probability_of_set(self, targets) -> np.ndarray:
        """h_A(x, Y) = P^x{walk exits A into Y}, for every x in A."""
        cols = [self.outer_index[tuple(t)] for t in targets]
        if not cols:
            return np.zeros(len(self))
        return self.solve(np.asarray(self.B[:, cols].sum(axis=1)).ravel())


def green_matrix(A: LatticeDomain):
    """Dense Green matrix for |A| <= DENSE_LIMIT, else a column-solving KilledWalk."""
    walk = KilledWalk(A)
    return walk.green_matrix() if walk.dense else walk


@dataclass
class DiscreteKernelSet:
    """Green's function, Poisson kernel and excursion Poisson kernel of A."""

    domain: LatticeDomain
    walk: KilledWalk = field(repr=False)
    poisson: np.ndarray = field(repr=False)
    excursion: np.ndarray = field(repr=False)

    @property
    def points(self):
        return self.walk.points

    @property
    def outer(self):
        return self.walk.outer

    def h(self, x, y) -> float:
        return float(self.poisson[self.walk.index[tuple(x)], self.walk.outer_index[tuple(y)]])

    def h_boundary(self, x, y) -> float:
        oi = self.walk.outer_index
        return float(self.excursion[oi[tuple(x)], oi[tuple(y)]])

    def mass(self, gamma, upsilon) -> float:
        oi = self.walk.outer_index
        gi = [oi[tuple(p)] for p in gamma]
        ui = [oi[tuple(p)] for p in upsilon]
        if not gi or not ui:
            return 0.0
        return float(self.excursion[np.ix_(gi, ui)].sum())

    def core_mask(self, N: int, g=None) -> np.ndarray:
        """Points whose continuum Green's function from 0 is >= N^(-1/16).

        ``g`` maps complex continuum positions to g(0, .); by default the
        disk formula -log|z| is used.
        """
        z = self.domain.embed(self.points)
        if g is None:
            with np.errstate(divide="ignore"):
                vals = -np.log(np.abs(z))
        else:
            vals = np.asarray(g(z), dtype=float)
        return vals >= N ** (-1.0 / 16.0)

    def to_csv(self, path, which: str = "excursion") -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "value"])
            if which == "excursion":
                for i, p in enumerate(self.outer):
                    for j, q in enumerate(self.outer):
                        w.writerow([f"{p[0]} {p[1]}", f"{q[0]} {q[1]}", repr(float(self.excursion[i, j]))])
            else:
                for i, p in enumerate(self.points):
                    for j, q in enumerate(self.outer):
                        w.writerow([f"{p[0]} {p[1]}", f"{q[0]} {q[1]}", repr(float(self.poisson[i, j]))])


def poisson_discrete(A: LatticeDomain, walk: KilledWalk | None = None) -> np.ndarray:
    """h_A(x, y) for x in A (sorted) and y in the sorted outer boundary."""
    walk = walk or KilledWalk(A)
    return walk.exit_probabilities()


def excursion_poisson_from(walk: KilledWalk, H: np.ndarray) -> np.ndarray:
    """h_dA(x, y) = (1/4) sum over interior neighbours z of x of h_A(z, y)."""
    # B^T has entry 1/4 at (x, z) for every boundary edge
    E = walk.B.T @ H
    return np.asarray(E)


def excursion_poisson_discrete(A: LatticeDomain, walk: KilledWalk | None = None) -> np.ndarray:
    walk = walk or KilledWalk(A)
    return excursion_poisson_from(walk, walk.exit_probabilities())


def kernel_set(A: LatticeDomain) -> DiscreteKernelSet:
    walk = KilledWalk(A)
    H = walk.exit_probabilities()
    return DiscreteKernelSet(A, walk, H, excursion_poisson_from(walk, H))


def excursion_mass(A: LatticeDomain, gamma, upsilon, kernels: DiscreteKernelSet | None = None) -> float:
    """Total 4^-|w| weight of excursions in A from gamma to upsilon."""
    gamma, upsilon = list(gamma), list(upsilon)
    if not gamma or not upsilon:
        return 0.0
    if kernels is not None:
        return kernels.mass(gamma, upsilon)
    walk = KilledWalk(A)
    hU = walk.exit_probability_of_set(upsilon)
    total = 0.0
    for x in gamma:
        for z in A.interior_neighbors(x):
            total += 0.25 * hU[walk.index[z]]
    return float(total)


ENUM_MAX_POINTS = 12
ENUM_MAX_LENGTH = 40


@dataclass
class ExcursionEnumeration:
    """Excursions of length <= max_length, aggregated by length.

    ``counts[k]`` is the exact number of excursions of length k from gamma
    to upsilon, so their mass is counts[k] / 4^k.  ``tail_bound`` bounds
    the mass of all longer excursions.
    """

    domain: LatticeDomain
    gamma: tuple
    upsilon: tuple
    max_length: int
    counts: dict
    tail_bound: float

    @property
    def mass(self) -> float:
        return float(self.exact_mass)

    @property
    def exact_mass(self) -> Fraction:
        return sum((Fraction(c, 4 ** k) for k, c in self.counts.items()), Fraction(0))

    @property
    def bracket(self) -> tuple:
        return self.mass, self.mass + self.tail_bound

    def __len__(self):
        return sum(self.counts.values())

    def paths(self):
        """Yield (path, weight) for every enumerated excursion, by depth-first search."""
        pts = self.domain.points
        ups = set(self.upsilon)
        K = self.max_length

        def extend(path):
            k = len(path) - 1
            last = path[-1]
            for dx, dy in NEIGHBORS:
                q = (last[0] + dx, last[1] + dy)
                if q in pts:
                    if k + 1 < K:
                        yield from extend(path + [q])
                elif q in ups and k >= 1:
                    yield tuple(path + [q]), Fraction(1, 4 ** (k + 1))

        for x in self.gamma:
            for z in self.domain.interior_neighbors(x):
                yield from extend([tuple(x), z])

    def to_jsonl(self, path, limit: int | None = None) -> None:
        with open(path, "w") as fh:
            for i, (p, w) in enumerate(self.paths()):
                if limit is not None and i >= limit:
                    break
                fh.write(json.dumps({"path": [list(q) for q in p], "weight": float(w)}) + "\n")


def enumerate_excursions(A: LatticeDomain, gamma, upsilon, max_length: int = 20,
                         remainder_steps: int = 400) -> ExcursionEnumeration:
    """Count every excursion from gamma to upsilon with at most max_length steps.

    Counting is exact (integer transfer-matrix recursion on walk counts).
    The omitted mass is bounded by propagating, for another max_length - 1
    steps, the vector u = sum_{j<M} Q^j b + Q^M 1 >= h_A(., upsilon), where b
    is the one-step exit mass into upsilon.
    """
    gamma = tuple(sorted(tuple(p) for p in gamma))
    upsilon = tuple(sorted(tuple(p) for p in upsilon))
    if len(A) > ENUM_MAX_POINTS:
        raise TooLarge(f"{len(A)} interior points exceeds {ENUM_MAX_POINTS}")
    if max_length > ENUM_MAX_LENGTH:
        raise TooLarge(f"max_length {max_length} exceeds {ENUM_MAX_LENGTH}")
    if not gamma or not upsilon:
        return ExcursionEnumeration(A, gamma, upsilon, max_length, {}, 0.0)
    pts = A.sorted_points()
    index = {p: i for i, p in enumerate(pts)}
    nbrs = [[index[q] for q in A.interior_neighbors(p)] for p in pts]
    ups = set(upsilon)
    exits = [sum(1 for dx, dy in NEIGHBORS if (p[0] + dx, p[1] + dy) in ups) for p in pts]
    # walk counts after the first step into A
    cur = [0] * len(pts)
    for x in gamma:
        for z in A.interior_neighbors(x):
            cur[index[z]] += 1
    counts = {}
    for k in range(2, max_length + 1):
        c = sum(cur[i] * exits[i] for i in range(len(pts)))
        if c:
            counts[k] = c
        nxt = [0] * len(pts)
        for i, v in enumerate(cur):
            if v:
                for j in nbrs[i]:
                    nxt[j] += v
        cur = nxt
    # cur[i] now counts in-domain walks with max_length steps ending at i
    walk = KilledWalk(A)
    Q = walk.Q.toarray()
    b = np.array(exits, dtype=float) / 4
    u = np.zeros(len(pts))
    term = b.copy()
    for _ in range(remainder_steps):
        u += term
        term = Q @ term
    u += np.linalg.matrix_power(Q, remainder_steps) @ np.ones(len(pts))
    start = np.array([float(Fraction(v, 4 ** (max_length - 1))) for v in cur])
    tail = float(start @ u) / 4
    # guard against rounding in the float propagation
    tail = tail * (1 + 1e-12) + 1e-300
    return ExcursionEnumeration(A, gamma, upsilon, max_length, counts, tail)


def excursion_mass_brackets(A: LatticeDomain, max_length: int = ENUM_MAX_LENGTH,
                            remainder_steps: int = 400, max_points: int = 1000) -> tuple:
    """Enumerated excursion masses and tail bounds for every boundary pair.

    Returns (outer, lower, tail): lower[x, y] is the 4^-|w| mass of
    excursions from x to y with at most max_length steps, accumulated by
    length as U Q^j V; tail[x, y] bounds the omitted mass by
    U Q^(K-1) W with W = sum_{j<M} Q^j V + (Q^M 1) 1^T >= h_A(., y).
    No linear system is solved.
    """
    if len(A) > max_points:
        raise TooLarge(f"{len(A)} interior points exceeds {max_points}")
    walk = KilledWalk(A)
    Q = walk.Q.toarray()
    V = walk.B.toarray()
    U = V.T
    lower = np.zeros((V.shape[1], V.shape[1]))
    P = V.copy()
    for _ in range(max_length - 1):
        lower += U @ P
        P = Q @ P
    W = np.zeros_like(V)
    term = V.copy()
    for _ in range(remainder_steps):
        W += term
        term = Q @ term
    W += (np.linalg.matrix_power(Q, remainder_steps) @ np.ones(len(A)))[:, None]
    tail = U @ np.linalg.matrix_power(Q, max_length - 1) @ W
    return walk.outer, lower, tail * (1 + 1e-12)


class ConditionedExcursionSampler:
    """Excursions from a boundary point conditioned to exit A into upsilon.

    The first step goes to an interior neighbour z with probability
    proportional to h_A(z, upsilon); afterwards the walk follows the Doob
    transform q(w, z) = p(w, z) h(z) / h(w) with h = h_A(., upsilon), extended
    by 1 on upsilon and 0 on the rest of the outer boundary.
    """

    def __init__(self, A: LatticeDomain, upsilon, walk: KilledWalk | None = None):
        self.domain = A
        self.walk = walk or KilledWalk(A)
        self.upsilon = frozenset(tuple(p) for p in upsilon)
        w = self.walk
        self.hU = w.exit_probability_of_set(sorted(self.upsilon))
        n = len(w.points)
        # states 0..n-1 interior, n.. outer boundary
        self.states = list(w.points) + list(w.outer)
        sidx = {p: i for i, p in enumerate(self.states)}
        hext = np.concatenate([self.hU, [1.0 if p in self.upsilon else 0.0 for p in w.outer]])
        self.h_ext = hext
        self.next = np.zeros((n, 4), dtype=np.int64)
        self.cum = np.zeros((n, 4))
        for i, p in enumerate(w.points):
            probs = []
            for k, (dx, dy) in enumerate(NEIGHBORS):
                j = sidx[(p[0] + dx, p[1] + dy)]
                self.next[i, k] = j
                probs.append(0.25 * hext[j])
            probs = np.array(probs)
            tot = probs.sum()
            self.cum[i] = np.cumsum(probs / tot) if tot > 0 else np.array([0.25, 0.5, 0.75, 1.0])
            self.cum[i, -1] = 1.0
        self.n_interior = n
        self.coords = np.array(self.states, dtype=np.int64)

    def first_step_law(self, x) -> tuple:
        x = tuple(x)
        nb = self.domain.interior_neighbors(x)
        if not nb:
            raise ZeroMeasure(f"{x} has no neighbour in A")
        wts = np.array([self.hU[self.walk.index[z]] for z in nb])
        if wts.sum() <= 0:
            raise ZeroMeasure(f"upsilon is unreachable from {x}")
        return nb, wts / wts.sum()

    def sample(self, x, n: int, rng: np.random.Generator, keep_paths: bool = True, max_steps: int = 10 ** 7):
        """Draw n conditioned excursions from x.

        Returns (endpoints, paths) where endpoints is an (n, 2) integer array
        and paths is a list of (len, 2) arrays, or None if keep_paths is False.
        """
        nb, p = self.first_step_law(x)
        idx = self.walk.index
        first = np.array([idx[z] for z in nb])[rng.choice(len(nb), size=n, p=p)]
        state = first.copy()
        active = np.arange(n)
        hist = [np.full(n, -1, dtype=np.int64), state.copy()] if keep_paths else None
        lengths = np.full(n, 1, dtype=np.int64)
        steps = 1
        while active.size:
            u = rng.random(active.size)
            s = state[active]
            k = (u[:, None] > self.cum[s]).sum(axis=1)
            k = np.minimum(k, 3)
            new = self.next[s, k]
            state[active] = new
            steps += 1
            lengths[active] = steps
            if keep_paths:
                row = np.full(n, -1, dtype=np.int64)
                row[active] = new
                hist.append(row)
            active = active[new < self.n_interior]
            if steps > max_steps:
                raise RuntimeError("conditioned walk did not terminate")
        ends = self.coords[state]
        paths = None
        if keep_paths:
            H = np.stack(hist, axis=1)
            paths = []
            x0 = np.array(x, dtype=np.int64)
            for i in range(n):
                seq = H[i, 1:lengths[i] + 1]
                paths.append(np.vstack([x0[None, :], self.coords[seq]]))
        return ends, paths


def sample_conditioned_excursion(A: LatticeDomain, x, upsilon, rng_seed: int, stream: int = 0):
    """One conditioned excursion from x ending in upsilon, as a list of points."""
    sampler = ConditionedExcursionSampler(A, upsilon)
    _, paths = sampler.sample(x, 1, make_rng(rng_seed, stream))
    return [tuple(int(c) for c in p) for p in paths[0]]


def sample_exit_points(A: LatticeDomain, x, n: int, rng: np.random.Generator) -> np.ndarray:
    """Exit positions of n plain random walks from x in A (vectorised)."""
    pts = A.points
    pos = np.tile(np.array(x, dtype=np.int64), (n, 1))
    active = np.arange(n)
    steps = np.array(NEIGHBORS, dtype=np.int64)
    lookup = A.points
    while active.size:
        pos[active] += steps[rng.integers(0, 4, size=active.size)]
        inside = np.fromiter(((int(a), int(b)) in lookup for a, b in pos[active]), dtype=bool, count=active.size)
        active = active[inside]
    del pts
    return pos
