import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings

from excursions.lattice_domain import JordanDomainSpec, LatticeDomain, discretize
from excursions.walk_kernels import (K0, ConditionedExcursionSampler, KilledWalk, TooLarge, ZeroMeasure,
                                     enumerate_excursions, excursion_mass, excursion_mass_brackets,
                                     excursion_poisson_discrete, harmonicity_residual, kernel_set, make_rng,
                                     poisson_discrete, potential_kernel, potential_kernel_diagonal,
                                     sample_conditioned_excursion, sample_exit_points)

from test_lattice_domain import polyomino


@pytest.fixture(scope="module")
def table():
    return potential_kernel(16)


def test_k0_value():
    assert K0 == pytest.approx((2 * 0.5772156649015329 + 3 * math.log(2)) / math.pi, rel=1e-15)
    assert K0 == pytest.approx(1.0293737, abs=1e-7)


def test_potential_kernel_exact_values(table):
    # a(1,0) = 1 and a(1,1) = 4/pi are classical exact values; the table
    # carries an O(L^-2) error from the asymptotic data on the box edge
    assert table(1, 0) == pytest.approx(1.0, abs=1e-6)
    assert table(1, 1) == pytest.approx(4 / math.pi, abs=1e-6)
    for n in (2, 5, 10):
        assert table(n, n) == pytest.approx(potential_kernel_diagonal(n), abs=1e-6)
    assert table(0, 0) == 0.0


def test_potential_kernel_symmetry_and_harmonicity(table):
    a = table.grid()
    assert np.allclose(a, a.T) and np.allclose(a, a[::-1])
    assert harmonicity_residual(table) < 1e-12
    # the correction k_x decays like |x|^-2
    assert abs(table.k(12, 5)) < 1e-3


def test_potential_kernel_range(table):
    with pytest.raises(KeyError):
        table(17, 0)
    with pytest.raises(ValueError):
        potential_kernel(0)


@pytest.fixture(scope="module")
def small_disk():
    return discretize(JordanDomainSpec.disk(), 6)


def test_green_symmetric_and_matches_dense_inverse(small_disk):
    walk = KilledWalk(small_disk)
    G = walk.green_matrix()
    assert np.allclose(G, G.T, atol=1e-13)
    # independent route: invert I - P directly from the neighbour lists
    pts = small_disk.sorted_points()
    idx = {p: i for i, p in enumerate(pts)}
    M = np.eye(len(pts))
    for p in pts:
        for q in small_disk.interior_neighbors(p):
            M[idx[p], idx[q]] -= 0.25
    assert np.allclose(G, np.linalg.inv(M), atol=1e-12)


@given(polyomino(max_cells=10))
@settings(max_examples=30, deadline=None)
def test_poisson_rows_sum_to_one(A):
    H = poisson_discrete(A)
    assert np.allclose(H.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(H >= -1e-15)


@given(polyomino(max_cells=10))
@settings(max_examples=30, deadline=None)
def test_excursion_kernel_symmetric(A):
    E = excursion_poisson_discrete(A)
    assert np.allclose(E, E.T, atol=1e-14)
    assert np.all(E >= -1e-15)


def test_green_small_blocks():
    assert KilledWalk(LatticeDomain(frozenset({(0, 0)}))).green((0, 0), (0, 0)) == 1.0
    # centre of the 3x3 block: by symmetry the edge and corner classes reduce to G = 3/2
    assert KilledWalk(LatticeDomain.block(-1, 1)).green((0, 0), (0, 0)) == pytest.approx(1.5, abs=1e-14)


def test_single_point_domain():
    A = LatticeDomain(frozenset({(0, 0)}))
    K = kernel_set(A)
    # every boundary-to-boundary excursion is x -> 0 -> y with weight 1/16
    for x in K.outer:
        for y in K.outer:
            assert K.h_boundary(x, y) == pytest.approx(1 / 16)
    assert excursion_mass(A, [(1, 0)], [(0, 1), (-1, 0)]) == pytest.approx(1 / 8)


def test_mass_routes_agree(small_disk):
    K = kernel_set(small_disk)
    outer = sorted(K.outer)
    gamma, upsilon = outer[:5], outer[-7:]
    assert excursion_mass(small_disk, gamma, upsilon) == pytest.approx(K.mass(gamma, upsilon), rel=1e-12)
    assert excursion_mass(small_disk, [], upsilon) == 0.0


def test_enumeration_counts_small_domain():
    A = LatticeDomain(frozenset({(0, 0), (1, 0)}))
    en = enumerate_excursions(A, [(-1, 0)], [(2, 0)], max_length=8)
    # length 3: (-1,0)->(0,0)->(1,0)->(2,0); each extra back-and-forth adds 2 steps
    assert en.counts == {3: 1, 5: 1, 7: 1}
    lo, hi = en.bracket
    exact = excursion_mass(A, [(-1, 0)], [(2, 0)])
    assert lo <= exact <= hi
    assert en.exact_mass == Fraction(1, 64) + Fraction(1, 4 ** 5) + Fraction(1, 4 ** 7)
    assert len(list(en.paths())) == len(en) == 3


def test_enumeration_guard():
    A = discretize(JordanDomainSpec.disk(), 8)
    with pytest.raises(TooLarge):
        enumerate_excursions(A, [], [], max_length=4)


def test_matrix_brackets_match_enumeration():
    A = LatticeDomain(frozenset({(0, 0), (1, 0), (1, 1), (2, 1)}))
    outer, lower, tail = excursion_mass_brackets(A, max_length=20)
    oi = {p: i for i, p in enumerate(outer)}
    for x in outer[:4]:
        for y in outer[-4:]:
            en = enumerate_excursions(A, [x], [y], max_length=20)
            assert lower[oi[x], oi[y]] == pytest.approx(en.mass, abs=1e-15)
            assert tail[oi[x], oi[y]] >= en.tail_bound * (1 - 1e-9)
    E = excursion_poisson_discrete(A)
    assert np.all(lower <= E + 1e-15) and np.all(E <= lower + tail + 1e-15)


def test_conditioned_sampler_lands_in_upsilon(small_disk):
    outer = sorted(KilledWalk(small_disk).outer)
    x, ups = outer[0], outer[-6:]
    s = ConditionedExcursionSampler(small_disk, ups)
    ends, paths = s.sample(x, 200, make_rng(1, 0))
    assert {tuple(e) for e in ends} <= set(ups)
    for p in paths[:20]:
        assert tuple(p[0]) == x and tuple(p[-1]) in set(ups)
        assert all(tuple(q) in small_disk.points for q in p[1:-1])
        assert np.all(np.abs(np.diff(p, axis=0)).sum(axis=1) == 1)


def test_conditioned_endpoint_law(small_disk):
    K = kernel_set(small_disk)
    outer = sorted(K.outer)
    x, ups = outer[0], outer[-6:]
    s = ConditionedExcursionSampler(small_disk, ups, K.walk)
    ends, _ = s.sample(x, 20000, make_rng(2, 0), keep_paths=False)
    w = np.array([K.h_boundary(x, y) for y in ups])
    freq = np.array([np.mean(np.all(ends == y, axis=1)) for y in ups])
    assert np.allclose(freq, w / w.sum(), atol=0.015)


def test_conditioned_sampler_unreachable():
    A = LatticeDomain(frozenset({(0, 0)}))
    with pytest.raises(ZeroMeasure):
        ConditionedExcursionSampler(A, [(0, 1)]).first_step_law((5, 5))


def test_sample_conditioned_excursion_reproducible(small_disk):
    outer = sorted(KilledWalk(small_disk).outer)
    a = sample_conditioned_excursion(small_disk, outer[0], outer[-3:], rng_seed=7)
    b = sample_conditioned_excursion(small_disk, outer[0], outer[-3:], rng_seed=7)
    assert a == b


def test_exit_points_follow_poisson_kernel(small_disk):
    K = kernel_set(small_disk)
    ends = sample_exit_points(small_disk, (0, 0), 20000, make_rng(3, 0))
    h = np.array([K.h((0, 0), y) for y in K.outer])
    freq = np.array([np.mean(np.all(ends == y, axis=1)) for y in K.outer])
    assert np.max(np.abs(freq - h)) < 0.012
