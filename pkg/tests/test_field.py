import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qflat.conventions import CoverageError, DegenerateGridError, InvalidDimensionError, c_n, omega_n
from qflat.field import (
    AnalyticField,
    GridField,
    LogTail,
    RadialProfile,
    annulus_average,
    annulus_flux_average,
    integrate_adaptive,
    make_nodes,
    radial_gradient_norm_sq,
    radial_laplacian,
    radial_polyharmonic,
    sphere_average,
    sphere_rule,
)


def test_normalization_constants():
    assert math.isclose(c_n(2), math.pi)
    assert math.isclose(c_n(4), 4 * math.pi**2)
    assert math.isclose(c_n(6), 2**4 * 2 * math.pi**3)
    assert math.isclose(omega_n(4), math.pi**2 / 2)


@pytest.mark.parametrize("n", [0, 3, -2, 2.5])
def test_odd_or_bad_dimension_rejected(n):
    with pytest.raises(InvalidDimensionError):
        c_n(n)


def test_nodes_layout():
    nodes = make_nodes(1e6, 2000)
    assert nodes[0] == 0.0 and nodes[-1] == 1e6
    assert np.all(np.diff(nodes) > 0)
    with pytest.raises(DegenerateGridError):
        make_nodes(10.0, 3)


def test_profile_validation():
    with pytest.raises(ValueError):
        RadialProfile([0.0, 2.0, 1.0], [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        RadialProfile([0.0, 1.0], [0.0, np.nan])
    with pytest.raises(ValueError):
        RadialProfile([1.0, 2.0], [0.0, 0.0], tail=LogTail(-1.0, 5.0, 2.0))


def test_profile_coverage():
    prof = RadialProfile(np.linspace(1, 2, 11), np.zeros(11))
    with pytest.raises(CoverageError):
        prof(3.0)
    tailed = RadialProfile([1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 0.0, 0.0], tail=LogTail(0.0, 0.0, 4.0))
    assert tailed(100.0) == 0.0


def test_profile_csv_round_trip():
    nodes = np.linspace(0, 2, 9)
    vals = -0.5 * np.log1p(nodes**2) + 1e-17 * nodes
    tail = LogTail(-1.0, float(vals[-1] + math.log(2.0)), 2.0)
    prof = RadialProfile(nodes, vals, tail=tail)
    text = prof.to_csv()
    assert text.splitlines()[0] == "r,value"
    back = RadialProfile.from_csv(text)
    assert np.array_equal(back.nodes, prof.nodes)
    assert np.array_equal(back.values, prof.values)
    assert back.tail == prof.tail


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-1, 1))
@settings(max_examples=30, deadline=None)
def test_laplacian_exact_on_even_quartics(a, b, c):
    # Delta (a + b r^2 + c r^4) = 2nb + 4c(n+2) r^2 in R^n
    nodes = np.linspace(0, 2, 41)
    for n in (2, 4, 6):
        prof = RadialProfile(nodes, a + b * nodes**2 + c * nodes**4)
        lap = radial_laplacian(prof, n)
        exact = 2 * n * b + 4 * c * (n + 2) * nodes**2
        assert np.allclose(lap.values, exact, atol=1e-9 * (1 + abs(b) + abs(c)))


def test_laplacian_off_origin_grid():
    nodes = np.linspace(1, 3, 81)
    prof = RadialProfile(nodes, np.log(nodes))
    # Delta log r = (n - 2) / r^2; the two end nodes on each side use one-sided stencils
    lap = radial_laplacian(prof, 4).values
    assert np.allclose(lap[2:-2], 2 / nodes[2:-2] ** 2, rtol=1e-6)
    assert np.allclose(lap, 2 / nodes**2, rtol=1e-3)


def test_polyharmonic_trims_and_matches():
    nodes = np.linspace(0, 2, 41)
    prof = RadialProfile(nodes, nodes**4)
    bilap = radial_polyharmonic(prof, 6, 2)
    # Delta^2 r^4 = 8 * 6 * (6 + 2) = 384 in R^6
    assert np.allclose(bilap.values, 384.0, rtol=1e-7)
    assert bilap.trimmed == (0, 4)
    with pytest.raises(DegenerateGridError):
        radial_polyharmonic(RadialProfile(nodes[:8], nodes[:8] ** 4), 6, 2)


def test_gradient_norm():
    nodes = np.linspace(0, 1, 21)
    prof = RadialProfile(nodes, nodes**2)
    assert np.allclose(radial_gradient_norm_sq(prof).values, 4 * nodes**2, atol=1e-10)


def test_adaptive_integral_improper_scale():
    val = integrate_adaptive(lambda s: s**3 * np.exp(-s), 0.0, 200.0)
    assert math.isclose(val, 6.0, rel_tol=1e-12)


def test_annulus_average_constant_and_flux_form():
    nodes = make_nodes(100, 400)
    prof = RadialProfile(nodes, np.ones_like(nodes))
    assert math.isclose(annulus_average(prof, 4, 3.0), 1.0, rel_tol=1e-10)
    # Delta r^2 = 2n, recovered from f' = 2r alone
    assert np.allclose(annulus_flux_average(lambda r: 2 * r, 4, np.array([1.0, 7.0])), 8.0)
    with pytest.raises(CoverageError):
        annulus_average(prof, 4, 80.0)


@pytest.mark.parametrize("n", [2, 3, 4, 6, 8])
def test_sphere_rule_moments(n):
    pts, w = sphere_rule(n, 8)
    assert math.isclose(w.sum(), 1.0, rel_tol=1e-13)
    # mean of x1^2 is 1/n, of x1^4 is 3/(n(n+2))
    assert math.isclose(w @ pts[:, 0] ** 2, 1 / n, rel_tol=1e-12)
    assert math.isclose(w @ pts[:, 0] ** 4, 3 / (n * (n + 2)), rel_tol=1e-12)


def test_sphere_average_of_harmonic_is_centre_value():
    h = AnalyticField.linear([1.0, -2.0, 0.5, 3.0], 0.7)
    p = np.array([0.3, 0.1, -0.2, 0.4])
    assert math.isclose(sphere_average(h, p, 1.3), h(p), rel_tol=1e-13)


@pytest.mark.parametrize("n,m", [(2, 1), (4, 2), (6, 3), (8, 2)])
def test_radial_power_laplacians_match_finite_differences(n, m):
    h = AnalyticField.radial_power(n, m)
    pts = np.random.default_rng(1).uniform(-0.8, 0.8, (5, n))
    errs = h.derivative_errors(pts, 1e-2)
    assert max(errs.values()) < 1e-6


def test_radial_power_polyharmonic_order():
    h = AnalyticField.radial_power(6, 2)
    x = np.ones((1, 6))
    assert h.iterated_laplacian(3)(x)[0] == 0.0
    assert h.iterated_laplacian(5)(x)[0] == 0.0


def test_grid_field_integral():
    g = GridField.sample(lambda x: np.exp(-np.sum(x**2, axis=-1)), 2, 0.05, 6.0)
    assert math.isclose(g.integrate(), math.pi, rel_tol=1e-12)
    with pytest.raises(InvalidDimensionError):
        GridField(3, 1.0, 1.0, np.zeros((2, 2, 2)))
