import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from excursions.curve_space import Curve, metric_dd
from excursions.harmonic_continuum import ConformalMap, excursion_poisson_arcs, poisson_disk
from excursions.harness import _walk_process, prohorov_oracle
from excursions.lattice_domain import JordanDomainSpec, discretize
from excursions.measures import (AcceptanceTooLow, FiniteCurveMeasure, FinitePointMeasure, NoSamples,
                                 coupled_epsilon_pairs, coupled_excursion_pairs, coupled_walk_bm_step_stream,
                                 endpoint_density_disk, nearest_move, prohorov_coupling_bound, prohorov_exact,
                                 sample_brownian_excursion, sample_wiener_to_boundary, tail_diameters,
                                 walk_on_spheres_exit_angles, wiener_exit_points)
from excursions.walk_kernels import TooLarge

DISK = JordanDomainSpec.disk()
QUARTERS = ((0.0, math.pi / 2), (math.pi, 3 * math.pi / 2))


def atoms(points, weights=None):
    w = np.ones(len(points)) if weights is None else np.asarray(weights, dtype=float)
    return FinitePointMeasure(tuple(complex(p) for p in points), w)


@st.composite
def measures(draw, max_atoms=5):
    k = draw(st.integers(1, max_atoms))
    pts = [complex(draw(st.integers(-3, 3)), draw(st.integers(-3, 3))) / 4 for _ in range(k)]
    w = [draw(st.floats(0.05, 1.0)) for _ in range(k)]
    return atoms(pts, w)


def test_prohorov_examples():
    assert prohorov_exact(atoms([0]), atoms([0.3])) == pytest.approx(0.3)
    assert prohorov_exact(atoms([0]), atoms([5])) == pytest.approx(1.0)
    assert prohorov_exact(atoms([0, 1j]), atoms([0, 1j])) == 0.0
    # half the mass sits far away: nothing cheaper than eps = 1/2 works
    assert prohorov_exact(atoms([0, 3], [0.5, 0.5]), atoms([0])) == pytest.approx(0.5)


def test_prohorov_size_guard():
    with pytest.raises(TooLarge):
        prohorov_exact(atoms(range(8)), atoms(range(8)))


@given(measures(), measures())
@settings(max_examples=60, deadline=None)
def test_prohorov_matches_definition(m1, m2):
    assert prohorov_exact(m1, m2) == pytest.approx(prohorov_oracle(m1, m2), abs=1e-12)


@given(measures(3), measures(3), measures(3))
@settings(max_examples=60, deadline=None)
def test_prohorov_metric_properties(a, b, c):
    ab = prohorov_exact(a, b)
    assert ab == pytest.approx(prohorov_exact(b, a), abs=1e-14)
    assert prohorov_exact(a, c) <= ab + prohorov_exact(b, c) + 1e-12
    assert abs(a.total_mass - b.total_mass) <= ab + 1e-12
    assert ab <= max(a.total_mass, b.total_mass) + 1e-12


@given(measures(4), measures(4), st.floats(0.1, 5.0))
@settings(max_examples=60, deadline=None)
def test_prohorov_scaling(m1, m2, C):
    p = prohorov_exact(m1, m2)
    assert prohorov_exact(m1.scale(C), m2.scale(C)) <= max(C, 1.0) * p + 1e-12


def test_coupling_bound_examples():
    # a quarter of the pairs are 0.5 apart: the fixed point is 0.25
    d = [0.0, 0.0, 0.0, 0.5]
    b = prohorov_coupling_bound(distances=d, weights=[0.25] * 4)
    assert b.estimate == pytest.approx(0.25) and b.slack == 0
    # identical pairs leave only the sampling slack
    b = prohorov_coupling_bound(distances=np.zeros(1000))
    assert b.estimate == 0
    assert b.bound == pytest.approx(math.sqrt(math.log(1e3) / 2000))
    with pytest.raises(NoSamples):
        prohorov_coupling_bound(distances=[])


@given(st.lists(st.floats(0, 2), min_size=1, max_size=6))
@settings(max_examples=60, deadline=None)
def test_coupling_bound_dominates_exact(shifts):
    # couple each atom with a displaced copy of itself
    pts = [complex(k, 0) for k in range(len(shifts))]
    moved = [p + 1j * s for p, s in zip(pts, shifts)]
    w = np.full(len(pts), 1 / len(pts))
    exact = prohorov_exact(atoms(pts, w), atoms(moved, w))
    assert prohorov_coupling_bound(distances=shifts, weights=w).bound >= exact - 1e-12


def test_curve_measure_operations(tmp_path):
    cs = [Curve.segment(0, 0.5), Curve(np.array([0, 0.2j, 0.3]), np.array([0.1, 0.2]))]
    m = FiniteCurveMeasure(cs, [2.0, 1.0])
    assert m.normalize().total_mass == pytest.approx(1.0)
    assert m.scale(3).total_mass == pytest.approx(9.0)
    with pytest.raises(ValueError):
        m.scale(0)
    img = m.pushforward(ConformalMap.scaling(2.0))
    assert img.curves[0].duration == pytest.approx(4 * cs[0].duration)
    assert np.array_equal(img.weights, m.weights)
    m.save(tmp_path / "m.bin")
    back = FiniteCurveMeasure.load(tmp_path / "m.bin")
    assert np.array_equal(back.weights, m.weights)
    assert all(metric_dd(a, b) < 1e-12 for a, b in zip(back.curves, m.curves))
    assert prohorov_exact(m.as_points(), back.as_points()) < 1e-12


def test_wiener_exit_two_routes():
    z = 0.4 + 0.2j
    n = 20000
    em = np.angle(wiener_exit_points(DISK, z, n, seed=1))
    wos = np.angle(np.exp(1j * walk_on_spheres_exit_angles(z, n, seed=2)))
    cdf = lambda t: np.array([integrate.quad(lambda s: poisson_disk(z, s), -math.pi, x)[0] for x in np.atleast_1d(t)])
    grid = np.linspace(-math.pi, math.pi, 41)
    F = cdf(grid)
    for sample in (em, wos):
        emp = np.searchsorted(np.sort(sample), grid) / n
        # DKW band at level 1e-3
        assert np.max(np.abs(emp - F)) < math.sqrt(math.log(2e3) / (2 * n))


def test_wiener_path_reaches_boundary():
    p = sample_wiener_to_boundary(DISK, 0.1j, seed=3)
    assert abs(abs(p.exit) - 1) < 1e-3
    assert np.all(np.abs(p.curve.points[:-1]) < 1)
    with pytest.raises(ValueError):
        sample_wiener_to_boundary(DISK, 2.0, seed=0)
    sq = sample_wiener_to_boundary(JordanDomainSpec.square(), 0.2, seed=4)
    assert max(abs(sq.exit.real), abs(sq.exit.imag)) == pytest.approx(1.0, abs=1e-3)


def test_step_stream_marginals():
    s = coupled_walk_bm_step_stream(seed=5, n=40000)
    assert s.mismatch_rate == 0
    counts = np.array([np.sum(np.all(s.moves == m, axis=1)) for m in ((1, 0), (0, 1), (-1, 0), (0, -1))])
    assert stats.chisquare(counts).pvalue > 1e-3
    assert np.var(s.increments.real) == pytest.approx(0.5 * s.step_time, rel=0.05)
    assert np.array_equal(nearest_move(np.array([1 + 0.1j, -0.2 + 1j])), [[1, 0], [0, 1]])


def test_endpoint_density_integrates_to_arc_mass():
    g, u = QUARTERS
    total, _ = integrate.quad(lambda t: endpoint_density_disk(g, u, t), *u, epsabs=1e-12)
    # per unit length of gamma the density is 1 / (pi (1 - cos)); the arc mass uses 1 / (2 pi (1 - cos))
    assert total / 2 == pytest.approx(excursion_poisson_arcs(g, u), rel=1e-8)


def test_brownian_excursion_endpoints():
    g, u = QUARTERS
    s = sample_brownian_excursion(g, u, eps=0.05, n=2000, seed=6, keep_paths=True)
    assert len(s.curves) == 2000
    th = np.mod(s.end_angles - u[0], 2 * math.pi) + u[0]
    assert np.all((th >= u[0] - 1e-9) & (th <= u[1] + 1e-9))
    bins = np.linspace(*u, 9)
    obs = np.histogram(th, bins)[0]
    exp = np.array([integrate.quad(lambda t: endpoint_density_disk(g, u, t), a, b)[0]
                    for a, b in zip(bins[:-1], bins[1:])])
    # a crude push-in depth biases the law slightly; the shape must still match
    assert stats.chisquare(obs, exp / exp.sum() * obs.sum()).pvalue > 1e-3
    for c in s.curves[:50]:
        assert abs(abs(c.start) - 0.95) < 1e-12
    assert s.measure().total_mass == pytest.approx(1.0)


def test_brownian_excursion_guards():
    with pytest.raises(ValueError):
        sample_brownian_excursion(*QUARTERS, eps=0.5, n=10, seed=0)
    with pytest.raises(AcceptanceTooLow):
        sample_brownian_excursion((0, 0.01), (0.02, 0.03), eps=0.1, n=10, seed=0, max_trials=50)


def test_epsilon_pairs_structure():
    pairs = coupled_epsilon_pairs(*QUARTERS, eps_hi=0.05, eps_lo=0.01, n=100, seed=7)
    assert len(pairs.first) == 100 and pairs.failed == 0
    for a, b in zip(pairs.first[:20], pairs.second[:20]):
        assert abs(abs(a.start) - 0.95) < 1e-12 and abs(abs(b.start) - 0.99) < 1e-12
        # both pieces end at the same exit point
        assert a.end == b.end
    assert np.all(pairs.distances >= 0)
    assert pairs.bound().bound < 0.5


def test_coupled_walk_pairs_structure():
    proc = _walk_process(DISK, 8, QUARTERS, 0.25)
    pairs = coupled_excursion_pairs(proc, proc, 20, delta=0.5 / math.sqrt(8), seed=8)
    assert len(pairs.first) + pairs.failed == 20
    ups = {complex(*y) / 8 for y in proc.upsilon}
    gam = {complex(*x) / 8 for x in proc.gamma}
    for a, b in zip(pairs.first, pairs.second):
        for c in (a, b):
            assert c.start in gam and c.end in ups
    assert np.all(np.isfinite(pairs.distances[: len(pairs.first)]))


def test_tail_diameters():
    A = discretize(DISK, 8)
    d = tail_diameters(A, 8, DISK, 200, seed=9)
    assert d.shape == (200,) and np.all(d >= 0) and np.all(d <= 2)
    assert np.median(d) < 0.5
