import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import sphere_bilaplacian, sphere_curvatures
from qflat.conventions import NodeMismatchError, UnsupportedDimensionError
from qflat.curvature import (
    ConformalMetric,
    RadialJet,
    conformal_laplacian_on_function,
    curvature_report,
    q_curvature,
    scalar_curvature,
    sigma2_schouten,
    traceless_ricci_norm_sq,
)
from qflat.field import RadialProfile, make_nodes
from qflat.zoo import sphere_jet, zoo_cone, zoo_flat, zoo_sphere


def test_oracle_sphere_constants():
    assert sphere_curvatures(4) == (12, 3)
    R2, Q2 = sphere_curvatures(2)
    assert R2 == 2 and float(Q2) == 0.5


@pytest.mark.parametrize("n", [2, 4])
@pytest.mark.parametrize("lam", [0.5, 1.0, 3.0])
def test_sphere_jet_matches_symbolic_bilaplacian(n, lam):
    r = np.linspace(0.01, 5, 50)
    jet = sphere_jet(n, lam)
    u, du, lap, dlap, d2lap = jet(r)
    bilap = d2lap + (n - 1) * dlap / r
    assert np.allclose(bilap, sphere_bilaplacian(n, lam)(r), rtol=1e-10, atol=1e-12)


def test_sphere_analytic_report():
    rep = curvature_report(zoo_sphere(4).metric)
    assert np.allclose(rep.R, 12, rtol=1e-10)
    assert np.allclose(rep.Q, 3, rtol=1e-6)
    assert np.allclose(rep.sigma2, 1.5, rtol=1e-10)
    assert np.allclose(rep.E_norm_sq, 0, atol=1e-10)
    assert rep.identities_hold and not rep.warnings


def test_sphere_two_dimensional_gauss_curvature():
    m = zoo_sphere(2).metric
    assert np.allclose(scalar_curvature(m).values, 2.0, rtol=1e-10)
    # Q = K / 2 in two dimensions
    assert np.allclose(q_curvature(m).values, 0.5, rtol=1e-6)


def test_flat_report_is_zero():
    rep = curvature_report(zoo_flat(4, r_max=10, count=100).metric)
    for col in ("R", "Q", "sigma2", "E_norm_sq", "lapg_R"):
        assert np.all(getattr(rep, col) == 0)


def test_fd_route_on_sphere_small_radius():
    m = zoo_sphere(4, r_max=3, count=201).metric.sampled()
    rep = curvature_report(m, method="fd")
    assert rep.method == "fd"
    assert len(rep.nodes) == 201 - 4
    assert np.allclose(rep.R, 12, atol=1e-6)
    assert np.allclose(rep.Q, 3, atol=1e-4)
    assert np.allclose(rep.sigma2, 1.5, atol=1e-6)
    assert max(rep.residual_maxima().values()) < 1e-5


def test_fd_and_analytic_agree_on_cone():
    entry = zoo_cone(4, 0.5, r_max=4, count=801)
    exact = curvature_report(entry.metric)
    fd = curvature_report(entry.metric.sampled(), method="fd")
    R_exact = np.interp(fd.nodes, exact.nodes, exact.R)
    assert np.max(np.abs(fd.R - R_exact)) < 1e-4 * np.max(np.abs(exact.R))


@given(st.floats(0.2, 5.0), st.floats(-3, 3))
@settings(max_examples=20, deadline=None)
def test_scaling_and_shift_covariance(lam, c):
    # u -> u + c multiplies R by e^{-2c} and Q by e^{-4c}
    nodes = np.linspace(0, 4, 41)
    base = ConformalMetric(4, RadialProfile(nodes, sphere_jet(4, lam)(nodes)[0]), "s", sphere_jet(4, lam))
    shifted = base.shifted(c)
    r0 = curvature_report(base, nodes)
    r1 = curvature_report(shifted, nodes)
    assert np.allclose(r1.R, r0.R * math.exp(-2 * c), rtol=1e-9)
    assert np.allclose(r1.Q, r0.Q * math.exp(-4 * c), rtol=1e-6)
    assert r1.identities_hold


def test_identity_residuals_on_cone():
    rep = curvature_report(zoo_cone(4, 0.5).metric)
    res = rep.residual_maxima()
    assert res["decomposition"] < 1e-6 and res["eq12"] < 1e-6


def test_four_dimensional_only_quantities():
    m = zoo_sphere(2).metric
    with pytest.raises(UnsupportedDimensionError):
        sigma2_schouten(m)
    with pytest.raises(UnsupportedDimensionError):
        traceless_ricci_norm_sq(m)
    rep = curvature_report(m)
    assert rep.sigma2 is None and rep.residual_decomposition() is None


def test_conformal_laplacian_requires_matching_nodes():
    m = zoo_sphere(4, r_max=3, count=101).metric.sampled()
    f = RadialProfile(np.linspace(0, 3, 51), np.zeros(51))
    with pytest.raises(NodeMismatchError):
        conformal_laplacian_on_function(m, f)


def test_conformal_laplacian_of_r_squared():
    # Delta_g r^2 = e^{-2u}(2n + 2(n - 2) r u')
    nodes = np.linspace(0, 2, 81)
    m = zoo_sphere(4, r_max=2, count=81).metric
    f = RadialProfile(nodes, nodes**2)
    u, du = sphere_jet(4, 1.0)(nodes)[:2]
    expected = np.exp(-2 * u) * (8 + 4 * nodes * du)
    assert np.allclose(conformal_laplacian_on_function(m, f).values, expected, rtol=1e-8)


def test_report_serialization():
    rep = curvature_report(zoo_sphere(4, r_max=10, count=50).metric)
    text = rep.to_csv()
    header = text.splitlines()[0]
    assert header == "r,R,R_minus,Q,sigma2,E2,lapgR"
    assert len(text.splitlines()) == 51
    payload = json.loads(rep.to_json())
    assert payload["conventions"]["c_n"] == pytest.approx(4 * math.pi**2)
    assert payload["identities_hold"] is True


def test_custom_jet_metric():
    jet = RadialJet(lambda r: (-(r**2), -2 * r, -8 + 0 * r, 0 * r, 0 * r))
    m = ConformalMetric(4, RadialProfile(make_nodes(3, 50), -make_nodes(3, 50) ** 2), "gauss", jet)
    rep = curvature_report(m)
    # W = Delta u + |u'|^2 = -8 + 4r^2 and Delta^2 u = 0
    assert np.allclose(rep.R, -6 * np.exp(2 * rep.nodes**2) * (-8 + 4 * rep.nodes**2))
    assert np.allclose(rep.Q, 0)
