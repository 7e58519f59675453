import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from excursions.lattice_domain import (ArcsTooClose, EmptyDomain, JordanDomainSpec, LatticeDomain,
                                       NotSimplyConnected, admissibility_threshold, arc_separation,
                                       associate_arcs, boundaries, boundary_edge_cycle, discretize, dual_segment,
                                       polyominoes, read_domain_config, union_of_squares)

DISK_ARCS = ((0.0, math.pi / 2), (math.pi, 3 * math.pi / 2))


@st.composite
def polyomino(draw, max_cells=12):
    """Random hole-free polyomino grown cell by cell from the origin."""
    cells = {(0, 0)}
    n = draw(st.integers(1, max_cells))
    while len(cells) < n:
        x, y = draw(st.sampled_from(sorted(cells)))
        dx, dy = draw(st.sampled_from([(1, 0), (0, 1), (-1, 0), (0, -1)]))
        cand = cells | {(x + dx, y + dy)}
        try:
            LatticeDomain(frozenset(cand))
        except NotSimplyConnected:
            continue
        cells = cand
    return LatticeDomain(frozenset(cells))


def test_threshold_value():
    # N^(-1/48) (log N)^(2/3) evaluated by hand at N = 8
    assert admissibility_threshold(8) == pytest.approx(8 ** (-1 / 48) * math.log(8) ** (2 / 3), rel=1e-15)
    assert admissibility_threshold(8) == pytest.approx(1.5600, abs=1e-4)
    assert admissibility_threshold(64) > math.pi / 2


@pytest.mark.parametrize("D", [JordanDomainSpec.disk(), JordanDomainSpec.square(),
                               JordanDomainSpec("radial", amplitude=0.2, frequency=3)])
@pytest.mark.parametrize("N", [4, 8, 16])
def test_discretization_squares_inside(D, N):
    A = discretize(D, N)
    assert A.contains_origin and A.spacing == Fraction(1, N)
    z = A.embed(A.sorted_points())
    for off in (0.5 + 0.5j, 0.5 - 0.5j, -0.5 + 0.5j, -0.5 - 0.5j):
        assert np.all(D.contains(z + off / N))
    # peeling removes the inner boundary of the kept component, so every
    # point of A is at least one extra square away from the boundary of D
    assert np.all(D.boundary_distance(z) > 1 / N)


def test_discretization_grows_with_N():
    sizes = [len(discretize(JordanDomainSpec.disk(), N)) for N in (4, 8, 16, 32)]
    assert sizes == sorted(sizes)
    assert sizes[-1] / 32 ** 2 == pytest.approx(math.pi, rel=0.15)


def test_tiny_scale_is_empty():
    with pytest.raises(EmptyDomain):
        discretize(JordanDomainSpec.disk(), 1)


def test_holes_rejected():
    ring = {(i, j) for i in range(3) for j in range(3)} - {(1, 1)}
    with pytest.raises(NotSimplyConnected):
        LatticeDomain(frozenset(ring))


@given(polyomino())
@settings(max_examples=60, deadline=None)
def test_boundary_invariants(A):
    outer, inner, edges = boundaries(A)
    assert not outer & A.points
    assert inner <= A.points
    for x, y in edges:
        assert x in A.points and y not in A.points
        assert abs(x[0] - y[0]) + abs(x[1] - y[1]) == 1
    adj = sum(1 for x in A.points for q in A.interior_neighbors(x))
    assert len(edges) == 4 * len(A) - adj


@given(polyomino())
@settings(max_examples=60, deadline=None)
def test_edge_cycle_is_closed_chain(A):
    cyc = boundary_edge_cycle(A)
    _, _, edges = boundaries(A)
    assert sorted(cyc) == sorted(edges)
    segs = [dual_segment(*e) for e in cyc]
    for (a, b), (c, _) in zip(segs, segs[1:] + segs[:1]):
        assert b == c


def test_polyomino_counts():
    # hole-free polyominoes up to rotation and reflection
    counts = [sum(1 for p in polyominoes(9) if len(p) == k) for k in range(1, 10)]
    assert counts == [1, 1, 2, 5, 12, 35, 107, 363, 1248]


@given(polyomino())
@settings(max_examples=40, deadline=None)
def test_union_of_squares_area(A):
    R = union_of_squares(A)
    v = R.boundary_polygon()
    area = 0.5 * np.sum((np.conj(v) * np.roll(v, -1)).imag)
    assert area == pytest.approx(float(R.area))
    assert R.contains(0j)[0]


def test_arc_association_disk():
    D = JordanDomainSpec.disk()
    ap = associate_arcs(D, 16, DISK_ARCS, min_sep=0)
    assert ap.gamma and ap.upsilon and not (ap.gamma & ap.upsilon)
    ang = np.angle(discretize(D, 16).embed(ap.gamma))
    assert np.all((ang > -0.2) & (ang < math.pi / 2 + 0.2))


def test_arc_guard():
    D = JordanDomainSpec.disk()
    with pytest.raises(ArcsTooClose):
        associate_arcs(D, 8, ((0.0, 1.0), (1.05, 2.0)))
    assert arc_separation(*DISK_ARCS) == pytest.approx(math.pi / 2)


def test_text_and_json_round_trip():
    A = discretize(JordanDomainSpec.disk(), 8)
    assert LatticeDomain.from_json(A.to_json()) == A
    grid = A.to_text_grid()
    assert grid.count("#") + grid.count("o") == len(A)


def test_read_domain_config(tmp_path):
    p = tmp_path / "d.ini"
    p.write_text("shape = rectangle\nhalf_width = 1\nhalf_height = 1\nn = 8, 16\narcs = 0, 1, 3, 4\n")
    cfg = read_domain_config(p)
    assert cfg.shape == "rectangle" and cfg.Ns == (8, 16) and cfg.arcs == ((0, 1), (3, 4))
    assert cfg.domain() == JordanDomainSpec.square()
