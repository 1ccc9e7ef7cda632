import json
import math

import numpy as np
import pytest

from qflat.conventions import CoverageError, UnsupportedDimensionError
from qflat.field import RadialProfile, make_nodes
from qflat.curvature import ConformalMetric
from qflat.geometry import (
    DIVERGES,
    HOLDS,
    aitken_limit,
    annulus_scalar_bound,
    deficit_check,
    divergence_flux,
    geometry_series,
    hypothesis_report,
    total_q,
)
from qflat.zoo import zoo_cone, zoo_flat, zoo_nonnormal, zoo_sphere


def test_flat_series():
    series = geometry_series(zoo_flat(4).metric, [0.5, 1.0, 7.0, 1e5])
    assert np.allclose(series.iso_ratio, 1.0, rtol=1e-12)
    assert math.isclose(series.area[1], 2 * math.pi**2, rel_tol=1e-14)
    assert math.isclose(series.volume[1], math.pi**2 / 2, rel_tol=1e-12)
    two = geometry_series(zoo_flat(2).metric, [3.0])
    assert math.isclose(two.iso_ratio[0], 1.0, rel_tol=1e-12)


def test_sphere_volume_and_ratio():
    series = geometry_series(zoo_sphere(4).metric, [1.0, 10.0, 100.0])
    assert math.isclose(series.volume[-1], 8 * math.pi**2 / 3, rel_tol=1e-6)
    # the ball of radius 1 is the hemisphere
    assert math.isclose(series.volume[0], 4 * math.pi**2 / 3, rel_tol=1e-10)
    assert series.iso_ratio[-1] < 1e-3
    assert np.all(np.diff(series.iso_ratio) < 0)


def test_volume_monotone_and_derivative():
    m = zoo_cone(4, 0.5).metric
    radii = np.geomspace(0.1, 1e4, 40)
    series = geometry_series(m, radii)
    assert np.all(np.diff(series.volume) > 0)
    for r in (0.7, 1.0, 30.0):
        h = 1e-4 * r
        vol = geometry_series(m, [r - h, r + h]).volume
        exact = 2 * math.pi**2 * r**3 * math.exp(4 * float(m.u_at(r)))
        assert math.isclose((vol[1] - vol[0]) / (2 * h), exact, rel_tol=1e-6)


def test_series_csv():
    text = geometry_series(zoo_flat(4).metric, [1.0, 2.0]).to_csv()
    assert text.splitlines()[0] == "r,area,volume,iso_ratio"
    assert len(text.splitlines()) == 3


def test_coverage_errors():
    prof = RadialProfile(np.linspace(0, 5, 51), np.zeros(51))
    m = ConformalMetric(4, prof, "short")
    with pytest.raises(CoverageError):
        geometry_series(m, [10.0])
    with pytest.raises(CoverageError):
        geometry_series(m, [0.0])


def test_total_q_values():
    assert total_q(zoo_flat(4).metric).value == 0.0
    assert math.isclose(total_q(zoo_sphere(4).metric).value, 2.0, abs_tol=1e-6)
    assert math.isclose(total_q(zoo_sphere(2).metric).value, 2.0, abs_tol=1e-6)
    assert math.isclose(total_q(zoo_cone(4, 0.3).metric).value, 0.3, abs_tol=1e-9)


def test_total_q_from_sampled_profile():
    entry = zoo_sphere(4, r_max=20, count=801)
    m = entry.metric.sampled()
    est = total_q(m)
    # fd quadrature of a sampled profile; the tail is added from the fitted power law
    assert math.isclose(est.value, 2.0, abs_tol=1e-3)


def test_hypotheses_flat():
    hyp = hypothesis_report(zoo_flat(4).metric)
    assert hyp.total_abs_q.value == 0 and hyp.total_Rminus_pow.value == 0
    assert hyp.complete and hyp.passing


def test_hypotheses_cone():
    hyp = hypothesis_report(zoo_cone(4, 0.5).metric)
    assert hyp.complete and hyp.passing
    assert math.isclose(hyp.completeness_exponent, -0.5, abs_tol=1e-6)
    # R > 0 beyond the ring, so the tail adds nothing to the R^- integral
    assert hyp.total_Rminus_pow.tail == 0.0
    assert hyp.total_R_sq.state == DIVERGES
    assert hyp.flags["sigma2_below_one"] == HOLDS


def test_hypotheses_sphere_and_nonnormal():
    sph = hypothesis_report(zoo_sphere(4).metric)
    assert not sph.complete and not sph.passing
    assert math.isclose(sph.sigma2_over.value, 2.0, abs_tol=1e-6)
    non = hypothesis_report(zoo_nonnormal(4).metric)
    assert non.total_Rminus_pow.state == DIVERGES
    assert non.complete


def test_deficit_flat_and_cones():
    flat = deficit_check(zoo_flat(4).metric)
    assert flat.chi == 1 and flat.deficit_residual < 1e-6 and flat.label == "ok"
    for alpha in (0.2, 0.5, 0.8):
        rep = deficit_check(zoo_cone(4, alpha).metric)
        assert abs(rep.iso_limit - (1 - alpha)) < 0.02
        assert rep.deficit_residual < 0.02
    two = deficit_check(zoo_cone(2, 0.5).metric)
    assert abs(two.iso_limit - 0.5) < 0.02


def test_deficit_sphere_label():
    rep = deficit_check(zoo_sphere(4).metric)
    assert rep.label == "hypotheses violated"
    assert math.isclose(rep.total_q_over_cn, 2.0, abs_tol=1e-6)
    payload = json.loads(rep.to_json())
    assert {"chi", "total_q_over_cn", "iso_limit", "deficit_residual"} <= set(payload)


def test_aitken_limit():
    seq = [1 + 0.5**k for k in (3, 4, 5)]
    limit, q = aitken_limit(seq)
    assert math.isclose(limit, 1.0, abs_tol=1e-14) and math.isclose(q, 0.5)
    assert aitken_limit([1.0, 1.0, 1.0]) == (1.0, None)


def test_flux_sphere_vanishes():
    F = [f for _, f in divergence_flux(zoo_sphere(4).metric, None, [0.5, 1, 5, 50])]
    assert np.max(np.abs(F)) < 1e-9


def test_flux_nonnormal_grows():
    F = np.abs([f for _, f in divergence_flux(zoo_nonnormal(4).metric, None, [1, 2, 4, 8])])
    assert np.all(np.diff(F) >= 0) and F[-1] > 1e6


def test_flux_cone_tail_constant():
    # beyond the support u = -a log r - a/(4r^2), so F tends to 2 pi^2 6a(2 - a)(2a - 2)
    a = 0.5
    F = dict(divergence_flux(zoo_cone(4, a).metric, None, [1e4, 1e5]))
    limit = 2 * math.pi**2 * 6 * a * (2 - a) * (2 * a - 2)
    assert math.isclose(F[1e5], limit, rel_tol=1e-6)


def test_flux_dimension_check():
    with pytest.raises(UnsupportedDimensionError):
        divergence_flux(zoo_sphere(2).metric, None, [1.0])


@pytest.mark.parametrize("entry", [zoo_flat(4), zoo_cone(4, 0.5), zoo_nonnormal(4), zoo_sphere(4)], ids=lambda e: e.name)
def test_hoelder_chain(entry):
    radii = np.geomspace(0.25, entry.metric.r_max / 2, 12)
    for r, left, right in annulus_scalar_bound(entry.metric, radii):
        assert left <= right + 1e-8 * max(1.0, abs(right))
    if entry.name == "flat":
        assert all(left == 0 and right == 0 for _, left, right in annulus_scalar_bound(entry.metric, radii))


def test_hoelder_bound_cone_tail():
    rows = annulus_scalar_bound(zoo_cone(4, 0.5).metric, [10.0, 100.0, 1e4])
    assert all(right == 0.0 and left < 0 for _, left, right in rows)


def test_gauss_bonnet_inequality_for_passing_entries():
    for entry in (zoo_flat(4), zoo_cone(4, 0.2), zoo_cone(4, 0.8), zoo_cone(2, 0.5)):
        hyp = hypothesis_report(entry.metric)
        assert hyp.passing
        assert total_q(entry.metric).value <= 1 + 1e-6
