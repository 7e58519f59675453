import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from excursions.harmonic_continuum import (ArcsOverlap, CoincidentAngles, CoincidentPoints, ConformalMap,
                                           boundary_winding, cara_report, conjugate_defect,
                                           excursion_poisson_arcs, excursion_poisson_disk, green_disk,
                                           log_estimate_holds, partition_arcs, poisson_disk,
                                           pushforward_kernel_check, rectangle_green, reference_map,
                                           riemann_map_numeric, sep_spr, solve_dirichlet)
from excursions.lattice_domain import JordanDomainSpec, discretize, union_of_squares


def arc_mass_closed_form(g, u):
    """Mass between arcs from the second antiderivative -(1/pi) log sin(d/2) of the kernel."""
    (a1, b1), (a2, b2) = g, u
    while a2 < b1:
        a2, b2 = a2 + 2 * math.pi, b2 + 2 * math.pi
    L = lambda d: math.log(math.sin(d / 2))
    return (L(b2 - b1) + L(a2 - a1) - L(b2 - a1) - L(a2 - b1)) / math.pi


@st.composite
def arc_pair(draw):
    a1 = draw(st.floats(0, 2 * math.pi))
    w1 = draw(st.floats(0.05, 2.0))
    gap1 = draw(st.floats(0.05, 1.5))
    w2 = draw(st.floats(0.05, 2 * math.pi - w1 - gap1 - 0.1))
    a2 = a1 + w1 + gap1
    return (a1, a1 + w1), (a2, a2 + w2)


def test_green_disk():
    assert green_disk(0.3, 0.5j) == pytest.approx(green_disk(0.5j, 0.3))
    assert green_disk(0.0, 0.5) == pytest.approx(math.log(2))
    assert abs(green_disk(np.exp(0.7j), 0.2 + 0.1j)) < 1e-12
    with pytest.raises(CoincidentPoints):
        green_disk(0.1, 0.1)


def test_poisson_disk_is_a_probability_density():
    t = np.linspace(0, 2 * math.pi, 4001)[:-1]
    for z in (0, 0.5, -0.3 + 0.6j):
        assert np.mean(poisson_disk(z, t)) * 2 * math.pi == pytest.approx(1.0, abs=1e-10)


def test_quarter_arcs_mass():
    g, u = (0.0, math.pi / 2), (math.pi, 3 * math.pi / 2)
    assert arc_mass_closed_form(g, u) == pytest.approx(math.log(2) / math.pi, rel=1e-14)
    assert excursion_poisson_arcs(g, u) == pytest.approx(math.log(2) / math.pi, rel=1e-9)


@given(arc_pair())
@settings(max_examples=25, deadline=None)
def test_arc_mass_quadrature_and_sandwich(arcs):
    g, u = arcs
    m = excursion_poisson_arcs(g, u)
    assert m == pytest.approx(arc_mass_closed_form(g, u), rel=1e-8)
    lo, hi = sep_spr((g, u)).sandwich()
    assert lo * (1 - 1e-12) <= m <= hi * (1 + 1e-12)


def test_kernel_guards():
    with pytest.raises(CoincidentAngles):
        excursion_poisson_disk(1.0, 1.0)
    with pytest.raises(ArcsOverlap):
        excursion_poisson_arcs((0, 1), (0.5, 2))


@given(arc_pair(), st.floats(-10, 10))
@settings(max_examples=40, deadline=None)
def test_sep_spr_rotation_invariant(arcs, c):
    # the choice of which boundary point gets angle 0 does not matter
    (a1, b1), (a2, b2) = arcs
    g0, g1 = sep_spr(arcs), sep_spr(((a1 + c, b1 + c), (a2 + c, b2 + c)))
    assert g1.sep == pytest.approx(g0.sep, abs=1e-9) and g1.spr == pytest.approx(g0.spr, abs=1e-9)
    assert g1.len_gamma == pytest.approx(g0.len_gamma, abs=1e-9)


def test_sep_spr_antipodal():
    geo = sep_spr(((0.0, 1.0), (3.0, 4.0)))
    assert geo.sep == pytest.approx(2.0)
    assert geo.spr == pytest.approx(math.pi)


def test_partition_reaches_ratio():
    p1, p2 = partition_arcs(((0.0, 1.0), (2.0, 3.0)), eta=0.05)
    assert all(sep_spr((x, y)).ratio <= 1.05 for x in p1 for y in p2)


def test_log_estimate():
    r = np.linspace(0, 0.5, 50)
    z = np.concatenate([r * np.exp(1j * t) for t in np.linspace(0, 2 * math.pi, 13)])
    assert np.all(log_estimate_holds(z))


@pytest.fixture(scope="module")
def disk_region():
    return union_of_squares(discretize(JordanDomainSpec.disk(), 8))


def test_dirichlet_reproduces_discrete_harmonic_polynomials(disk_region):
    # x, y and x^2 - y^2 are exactly harmonic for the 5-point Laplacian
    for fn in (lambda z: z.real, lambda z: z.imag, lambda z: z.real ** 2 - z.imag ** 2):
        f = solve_dirichlet(disk_region, fn, subdivision=4)
        Z = f.coords()
        assert np.allclose(f.values[f.interior], fn(Z[f.interior]), atol=1e-11)
        assert f.residual < 1e-12


def test_numeric_map_structure(disk_region):
    cm = riemann_map_numeric(disk_region, subdivision=4)
    assert boundary_winding(cm) == pytest.approx(2 * math.pi, abs=1e-9)
    assert conjugate_defect(cm.field.field) < 1e-9
    z, w = cm.field.node_values()
    assert np.all(np.abs(w) < 1 + 1e-9)
    assert abs(cm(np.array([0j]))[0]) < 1e-12
    pts = np.array([0.1 + 0.2j, -0.3j, 0.4])
    assert np.allclose(cm.inverse(cm(pts)), pts, atol=1e-9)


def test_rectangle_green_symmetry_and_boundary():
    assert rectangle_green(0.1, 0.3j, 1, 1) == pytest.approx(rectangle_green(0.3j, 0.1, 1, 1), rel=1e-10)
    assert abs(rectangle_green(0.2, 0.999, 1, 1)) < 5e-3
    assert rectangle_green(0, 0.2, 2, 0.5) == pytest.approx(rectangle_green(0, 0.2j, 0.5, 2), rel=1e-10)


def test_square_map_against_series():
    # two routes to g(0, .) on the square: the numerical map and the sine series
    F = reference_map(JordanDomainSpec.square())
    z = np.array([0.3, 0.5 + 0.2j, -0.6j, 0.7 - 0.7j])
    series = np.array([rectangle_green(0, w, 1, 1) for w in z])
    assert np.allclose(-np.log(np.abs(F(z))), series, atol=2e-3)
    # conformal radius from the regular part of the series near the origin;
    # by symmetry the correction is O(r^4)
    r = 1e-2
    crad = math.exp(rectangle_green(0, r, 1, 1) + math.log(r))
    assert F.field.conformal_radius == pytest.approx(crad, rel=1e-3)
    assert crad == pytest.approx(1.0787, abs=1e-4)


@pytest.mark.parametrize("f", [ConformalMap.mobius(0.3), ConformalMap.mobius(-0.5), ConformalMap.rotation(1.1),
                               ConformalMap.scaling(2.5), ConformalMap.scaling(0.4 * np.exp(1j))])
def test_kernel_covariance(f):
    res = pushforward_kernel_check(f, samples=200)
    assert res["poisson"] < 1e-12 and res["excursion"] < 1e-12
    if f.kind == "scaling":
        rho = abs(f.param)
        assert res["poisson_scale"] == pytest.approx(1 / rho)
        assert res["excursion_scale"] == pytest.approx(1 / rho ** 2)


def test_mobius_inverse():
    f = ConformalMap.mobius(0.4)
    z = np.array([0.1, -0.5j, 0.3 + 0.3j])
    assert np.allclose(f.inverse(f(z)), z)
    assert np.allclose(f.derivative(z), (f(z + 1e-6) - f(z - 1e-6)) / 2e-6, atol=1e-8)


def test_cara_disk_decreases():
    rows = cara_report(JordanDomainSpec.disk(), (8, 16), subdivision=4)
    assert rows[1]["r=0.5"] < rows[0]["r=0.5"]
    # the lattice regions sit inside the disk, so F_N'(0) > 1 and shrinks towards 1
    assert 1 < rows[1]["fprime0"] < rows[0]["fprime0"]
