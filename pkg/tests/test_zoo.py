import math

import numpy as np
import pytest

from qflat.conventions import QflatError, UnsupportedDimensionError
from qflat.curvature import curvature_report
from qflat.field import RadialProfile
from qflat.geometry import deficit_check, divergence_flux, geometry_series, hypothesis_report, total_q
from qflat.potential import normality_residual
from qflat.zoo import get_entry, list_entries, zoo_cone, zoo_flat, zoo_nonnormal, zoo_sphere

TAGS = {"trivial", "derived", "paper"}


def measure(entry, key):
    m = entry.metric
    if key in ("R", "Q", "sigma2"):
        rep = curvature_report(m)
        col = {"R": rep.R, "Q": rep.Q, "sigma2": rep.sigma2}[key]
        return float(col[np.argmax(np.abs(col - np.median(col)))])
    if key == "iso_ratio":
        return float(geometry_series(m, [1e3]).iso_ratio[0])
    if key == "total_q":
        return total_q(m).value
    if key in ("deficit_residual", "iso_limit"):
        return getattr(deficit_check(m), key)
    if key == "complete":
        return hypothesis_report(m).complete
    if key == "sigma2_over":
        return hypothesis_report(m).sigma2_over.value
    if key == "total_Rminus_pow":
        return hypothesis_report(m).total_Rminus_pow.state
    if key == "Rminus_tail":
        return hypothesis_report(m).total_Rminus_pow.tail
    if key in ("verdict", "h_spread"):
        return getattr(normality_residual(m, entry.density), key)
    if key == "lap_h_avg":
        return float(np.max(np.abs(normality_residual(m, entry.density).lap_h_annulus - 8.0)) + 8.0)
    if key == "flux":
        return max(abs(f) for _, f in divergence_flux(m, None, [0.5, 2.0, 20.0]))
    raise KeyError(key)


ENTRIES = [zoo_flat(4), zoo_flat(2), zoo_sphere(4), zoo_sphere(2, 2.0), zoo_cone(4, 0.5), zoo_cone(4, 0.2), zoo_nonnormal(4)]


@pytest.mark.parametrize("entry", ENTRIES, ids=lambda e: f"{e.name}-n{e.n}")
def test_expected_values(entry):
    for key, exp in entry.expected.items():
        assert exp.tag in TAGS
        if key == "flux" and entry.n != 4:
            continue
        got = measure(entry, key)
        if isinstance(exp.value, (bool, str)):
            assert got == exp.value, key
        else:
            assert math.isclose(got, exp.value, abs_tol=exp.tol + 1e-300), (key, got, exp.value)


def test_registry():
    names = list_entries()
    assert len(names) >= 4 and {"flat", "sphere", "cone", "nonnormal"} <= set(names)
    assert get_entry("cone", alpha=0.3).params["alpha"] == 0.3
    with pytest.raises(KeyError):
        get_entry("bogus")


def test_domain_errors():
    for alpha in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(QflatError):
            zoo_cone(4, alpha)
    with pytest.raises(UnsupportedDimensionError):
        zoo_sphere(6)
    with pytest.raises(UnsupportedDimensionError):
        zoo_nonnormal(2)
    with pytest.raises(QflatError):
        zoo_sphere(4, -1.0)


def test_borderline_alpha_warns():
    with pytest.warns(UserWarning):
        entry = zoo_cone(4, 0.99)
    assert entry.params["alpha"] == 0.99


def test_potential_built_entries_are_exact_potentials():
    entry = zoo_cone(4, 0.8)
    r = np.geomspace(1e-3, 1e6, 30)
    from qflat.potential import log_potential

    assert np.array_equal(entry.metric.u_at(r), log_potential(entry.density, r))


def test_profile_export_round_trip():
    entry = zoo_sphere(4, r_max=10, count=60)
    back = RadialProfile.from_csv(entry.profile_csv())
    assert np.array_equal(back.values, entry.metric.profile.values)
    assert back.tail is not None and math.isclose(back.tail.beta, -2.0, rel_tol=1e-2)


def test_describe_echoes_parameters():
    info = zoo_cone(4, 0.5).describe()
    assert info["params"]["alpha"] == 0.5
    assert all(e["tag"] in TAGS for e in info["expected"].values())
