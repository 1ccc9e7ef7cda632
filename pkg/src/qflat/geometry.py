"""Integral geometry of g = e^{2u}|dx|^2: volumes, the isoperimetric ratio,
curvature integrals with tail analysis, the deficit identity and the
boundary flux of Delta_g R.

Curvature integrals use conformally invariant flat-space integrands so the
exponentials never appear on their own:

    (R^-)^{n/2} dv = (2(n-1) max(W, 0))^{n/2} dx,   W = Delta u + (n-2)/2 |u'|^2
    Q dv           = (-Delta)^{n/2} u / 2 dx
    |R|^2 dv       = (2(n-1) W)^2 dx                (n = 4)
    sigma2 dv      = sigma2 of the flat-frame Schouten eigenvalues dx   (n = 4)
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .conventions import CoverageError, UnsupportedDimensionError, c_n, conventions_block, omega_n, sphere_area
from .curvature import ConformalMetric, CurvatureReport, local_geometry
from .field import (
    RadialProfile,
    adaptive_breaks,
    annulus_flux_average,
    gauss_legendre,
    panel_integrals,
    radial_breaks,
)

CHI = 1  # Euler characteristic of R^n, a single end

HOLDS = "holds"
FAILS = "fails"
DIVERGES = "diverges-numerically"


# --- radial quadrature with tail analysis ------------------------------------------


@dataclass(frozen=True)
class IntegralEstimate:
    """Value of an improper radial integral with a quadrature error estimate.

    ``state`` is "holds" when the integral converges (the tail beyond the
    last radius is added in closed form from a fitted power law) and
    "diverges-numerically" when the integrand decays no faster than 1/r.
    """

    value: float
    error: float
    state: str
    tail: float = 0.0
    tail_exponent: float | None = None

    def __float__(self) -> float:
        return float(self.value)

    @property
    def finite(self) -> bool:
        return self.state == HOLDS

    def to_dict(self) -> dict:
        return {
            "value": float(self.value),
            "error": float(self.error),
            "state": self.state,
            "tail": float(self.tail),
            "tail_exponent": None if self.tail_exponent is None else float(self.tail_exponent),
        }


def _breaks(m: ConformalMetric, a: float, b: float, extra=()) -> np.ndarray:
    pts = [p for p in tuple(m.breakpoints) + tuple(extra) if a < p < b]
    return radial_breaks(a, b, scale=1.0, ratio=1.1, extra=pts)


def radial_integral(density: Callable, m: ConformalMetric, r_max: float, rtol: float = 1e-11, tail: bool = True) -> IntegralEstimate:
    """int_0^{r_max} density(s) ds plus a power-law tail beyond r_max.

    ``density`` is already the radial density (it includes the
    |S^{n-1}| s^{n-1} factor).  The tail exponent p is fitted over the
    last decade; p < -1.05 counts as convergent.
    """
    breaks = adaptive_breaks(density, _breaks(m, 0.0, r_max), rtol=rtol)
    fine = panel_integrals(density, breaks, 16)
    coarse = panel_integrals(density, breaks, 8)
    value = float(np.sum(fine))
    error = float(np.sum(np.abs(fine - coarse))) + 1e-15 * float(np.sum(np.abs(fine)))
    if not tail:
        return IntegralEstimate(value, error, HOLDS)
    s = np.geomspace(r_max / 10, r_max, 17)
    g = np.abs(np.asarray(density(s), dtype=float))
    scale = max(abs(value), float(np.sum(np.abs(fine))), 1e-300)
    if np.all(g * s <= 1e-15 * scale):
        return IntegralEstimate(value, error, HOLDS, 0.0, None)
    keep = g > 0
    p = float(np.polyfit(np.log(s[keep]), np.log(g[keep]), 1)[0])
    if p >= -1.05:
        return IntegralEstimate(value, error, DIVERGES, math.inf, p)
    signed_end = float(density(np.array([r_max]))[0])
    tail_val = signed_end * r_max / (-p - 1.0)
    return IntegralEstimate(value + tail_val, error + 0.05 * abs(tail_val), HOLDS, tail_val, p)


def _curvature_densities(m: ConformalMetric, method: str = "auto"):
    """Radial densities of Q dv, (R^-)^{n/2} dv, |R|^2 dv and sigma2 dv."""
    n = m.n
    area = sphere_area(n)
    if m.jet is None or method == "fd":
        from .curvature import curvature_report

        rep = curvature_report(m, method="fd")
        return _densities_from_report(rep, area)

    def local(s):
        s = np.asarray(s, dtype=float)
        return local_geometry(m, s.ravel(), "analytic"), s.shape

    def q(s):
        loc, shp = local(s)
        return (area * loc.r ** (n - 1) * loc.q_density).reshape(shp)

    def rminus(s):
        loc, shp = local(s)
        return (area * loc.r ** (n - 1) * (2 * (n - 1) * np.maximum(loc.W, 0.0)) ** (n / 2)).reshape(shp)

    def rsq(s):
        loc, shp = local(s)
        return (area * loc.r ** (n - 1) * (2 * (n - 1) * loc.W) ** 2 * np.exp((n - 4) * loc.u)).reshape(shp)

    def sig(s):
        loc, shp = local(s)
        return (area * loc.r ** (n - 1) * _flat_sigma2(loc, n)).reshape(shp)

    return q, rminus, rsq, sig


def _flat_sigma2(loc, n: int) -> np.ndarray:
    r, du, d2u = loc.r, loc.du, loc.d2u
    a_r = -d2u + du**2 / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        a_t = np.where(r > 0, -du / np.where(r > 0, r, 1.0), -d2u) - du**2 / 2
    return ((n - 1) * a_r * a_t + (n - 1) * (n - 2) / 2 * a_t**2) * np.exp((n - 4) * loc.u)


def _densities_from_report(rep: CurvatureReport, area: float):
    n = rep.n
    r = rep.nodes
    e = np.exp
    Rflat = rep.R * e(2 * rep.u)  # = -2(n-1) W
    qd = RadialProfile(r, area * r ** (n - 1) * rep.q_density)
    rm = RadialProfile(r, area * r ** (n - 1) * np.maximum(-Rflat, 0.0) ** (n / 2))
    rs = RadialProfile(r, area * r ** (n - 1) * Rflat**2 * e((n - 4) * rep.u))
    sg = None
    if rep.sigma2 is not None:
        sg = RadialProfile(r, area * r ** (n - 1) * rep.sigma2 * e(n * rep.u))
    return qd, rm, rs, sg


def _integrate(density, m: ConformalMetric, r_max: float) -> IntegralEstimate:
    if isinstance(density, RadialProfile):
        lo, hi = density.r_min, min(density.r_max, r_max)
        breaks = np.asarray(density.nodes)
        breaks = breaks[(breaks >= lo) & (breaks <= hi)]
        fine = panel_integrals(density, breaks, 8)
        coarse = panel_integrals(density, breaks, 4)
        value = float(np.sum(fine))
        est = IntegralEstimate(value, float(np.sum(np.abs(fine - coarse))), HOLDS)
        s = np.geomspace(hi / 10, hi, 17)
        g = np.abs(density(s))
        if np.any(g * s > 1e-15 * max(abs(value), 1e-300)):
            keep = g > 0
            p = float(np.polyfit(np.log(s[keep]), np.log(g[keep]), 1)[0])
            if p >= -1.05:
                return IntegralEstimate(value, est.error, DIVERGES, math.inf, p)
            tail = float(density(hi)) * hi / (-p - 1)
            return IntegralEstimate(value + tail, est.error + 0.05 * abs(tail), HOLDS, tail, p)
        return est
    return radial_integral(density, m, r_max)


# --- series ---------------------------------------------------------------------------


@dataclass
class GeometrySeries:
    radii: np.ndarray
    area: np.ndarray
    volume: np.ndarray
    iso_ratio: np.ndarray
    n: int = 4

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("r,area,volume,iso_ratio\n")
        for row in zip(self.radii, self.area, self.volume, self.iso_ratio):
            buf.write(",".join(f"{x:.17g}" for x in row) + "\n")
        return buf.getvalue()


def _log_area(m: ConformalMetric, r):
    n = m.n
    return math.log(sphere_area(n)) + (n - 1) * (np.log(r) + m.u_at(r))


def _volumes(m: ConformalMetric, radii: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    n = m.n
    area = sphere_area(n)
    dens = lambda s: area * s ** (n - 1) * np.exp(n * m.u_at(s))  # noqa: E731
    breaks = adaptive_breaks(dens, _breaks(m, 0.0, float(radii.max()), extra=radii), rtol=rtol)
    cum = np.concatenate([[0.0], np.cumsum(panel_integrals(dens, breaks))])
    idx = np.searchsorted(breaks, radii)
    if not np.allclose(breaks[idx], radii, rtol=0, atol=0):
        raise AssertionError("radii must be panel edges")
    return cum[idx]


def _check_coverage(m: ConformalMetric, radii):
    if np.any(radii <= 0):
        raise CoverageError("radii must be positive")
    if m.jet is None:
        prof = m.profile
        if prof.tail is None and np.any(radii > prof.r_max * (1 + 1e-12)):
            raise CoverageError("radius beyond the profile without a declared tail")


def geometry_series(m: ConformalMetric, radii) -> GeometrySeries:
    """Area of dB_r, volume of B_r and the normalized isoperimetric ratio."""
    n = m.n
    radii = np.sort(np.asarray(radii, dtype=float))
    _check_coverage(m, radii)
    vol = _volumes(m, radii)
    log_area = _log_area(m, radii)
    log_iso = n / (n - 1) * log_area - math.log(n) - math.log(sphere_area(n)) / (n - 1) - np.log(vol)
    return GeometrySeries(radii, np.exp(log_area), vol, np.exp(log_iso), n)


def iso_ratio(m: ConformalMetric, radii) -> np.ndarray:
    return geometry_series(m, radii).iso_ratio


# --- curvature integrals ------------------------------------------------------------


def total_q(m: ConformalMetric, report: CurvatureReport | None = None, r_max: float | None = None) -> IntegralEstimate:
    """(1/c_n) int Q dv, with the tail beyond r_max added analytically."""
    r_max = m.r_max if r_max is None else r_max
    if report is not None and m.jet is None:
        dens = _densities_from_report(report, sphere_area(m.n))[0]
    else:
        dens = _curvature_densities(m)[0]
    est = _integrate(dens, m, r_max)
    c = c_n(m.n)
    return IntegralEstimate(est.value / c, est.error / c, est.state, est.tail / c, est.tail_exponent)


@dataclass
class HypothesisReport:
    total_abs_q: IntegralEstimate
    total_Rminus_pow: IntegralEstimate
    total_R_sq: IntegralEstimate | None
    sigma2_over: IntegralEstimate | None
    complete: bool
    completeness_exponent: float
    flags: dict = field(default_factory=dict)

    @property
    def passing(self) -> bool:
        """Integrability of |Q| and (R^-)^{n/2} plus completeness."""
        return self.total_abs_q.finite and self.total_Rminus_pow.finite and self.complete

    def to_dict(self) -> dict:
        out = {
            "total_abs_q": self.total_abs_q.to_dict(),
            "total_Rminus_pow": self.total_Rminus_pow.to_dict(),
            "total_R_sq": None if self.total_R_sq is None else self.total_R_sq.to_dict(),
            "sigma2_over": None if self.sigma2_over is None else self.sigma2_over.to_dict(),
            "complete": bool(self.complete),
            "completeness_exponent": float(self.completeness_exponent),
            "flags": dict(self.flags),
            "passing": self.passing,
        }
        return out


def completeness_exponent(m: ConformalMetric) -> float:
    """Fitted beta in u ~ beta log r over the last decade of the metric."""
    r = np.geomspace(m.r_max / 10, m.r_max, 17)
    return float(np.polyfit(np.log(r), m.u_at(r), 1)[0])


def hypothesis_report(m: ConformalMetric, report: CurvatureReport | None = None, r_max: float | None = None) -> HypothesisReport:
    """Integrability of |Q|, (R^-)^{n/2}, |R|^2 and sigma2, plus radial completeness."""
    n = m.n
    r_max = m.r_max if r_max is None else r_max
    if report is not None and m.jet is None:
        dens = _densities_from_report(report, sphere_area(n))
    else:
        dens = _curvature_densities(m)
    qd, rm, rs, sg = dens
    absq = (lambda s: np.abs(qd(s))) if not isinstance(qd, RadialProfile) else qd.with_values(np.abs(qd.values))
    total_abs = _integrate(absq, m, r_max)
    rminus = _integrate(rm, m, r_max)
    rsq = sig = None
    if n == 4:
        rsq = _integrate(rs, m, r_max)
        s2 = _integrate(sg, m, r_max)
        scale = 2 * math.pi**2
        sig = IntegralEstimate(s2.value / scale, s2.error / scale, s2.state, s2.tail / scale, s2.tail_exponent)
    beta = completeness_exponent(m)
    # e^u ~ r^beta has a divergent integral iff beta >= -1; a small margin absorbs fit noise
    complete = beta >= -1.0 - 1e-3
    flags = {
        "abs_q": total_abs.state,
        "Rminus": rminus.state,
        "complete": HOLDS if complete else FAILS,
    }
    if n == 4:
        flags["R_sq"] = rsq.state
        flags["sigma2_below_one"] = DIVERGES if not sig.finite else (HOLDS if sig.value < 1 else FAILS)
    return HypothesisReport(total_abs, rminus, rsq, sig, complete, beta, flags)


# --- deficit ------------------------------------------------------------------------------


def aitken_limit(values) -> tuple[float, float | None]:
    """Extrapolate a sequence with geometric error, returning (limit, ratio).

    Falls back to the last value when the differences are not consistent
    with a contracting geometric correction.
    """
    a, b, c = (float(v) for v in values)
    d1, d2 = b - a, c - b
    if d1 == 0 or d2 == 0:
        return c, None
    q = d2 / d1
    if not 0 < q < 1:
        return c, q
    return c + d2 * q / (1 - q), q


@dataclass
class DeficitReport:
    chi: int
    total_q_over_cn: float
    iso_limit: float
    deficit_residual: float
    label: str
    hypotheses: HypothesisReport
    iso_samples: tuple
    correction_exponent: float | None
    total_q_error: float
    n: int = 4

    def to_dict(self) -> dict:
        return {
            "chi": self.chi,
            "total_q_over_cn": float(self.total_q_over_cn),
            "total_q_error": float(self.total_q_error),
            "iso_limit": float(self.iso_limit),
            "deficit_residual": float(self.deficit_residual),
            "label": self.label,
            "iso_samples": [[float(r), float(i)] for r, i in self.iso_samples],
            "correction_exponent": None if self.correction_exponent is None else float(self.correction_exponent),
            "hypotheses": self.hypotheses.to_dict(),
            "conventions": conventions_block(self.n),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def deficit_check(m: ConformalMetric, r_max: float | None = None) -> DeficitReport:
    """chi - (1/c_n) int Q dv compared with the extrapolated isoperimetric ratio."""
    r_max = m.r_max if r_max is None else r_max
    radii = np.array([r_max / 4, r_max / 2, r_max])
    iso = iso_ratio(m, radii)
    limit, q = aitken_limit(iso)
    eps = None if q is None or not 0 < q < 1 else -math.log2(q)
    tq = total_q(m, r_max=r_max)
    hyp = hypothesis_report(m, r_max=r_max)
    label = "ok" if hyp.passing and tq.finite else "hypotheses violated"
    residual = abs(CHI - tq.value - limit)
    return DeficitReport(CHI, tq.value, limit, residual, label, hyp, tuple(zip(radii, iso)), eps, tq.error, m.n)


# --- flux and annulus bound ---------------------------------------------------------------


def divergence_flux(m: ConformalMetric, report: CurvatureReport | None = None, radii=None) -> list[tuple[float, float]]:
    """F(rho) = int_{B_rho} Delta_g R dv_g as the flux |S^3| rho^3 e^{2u} R'(rho)."""
    if m.n != 4:
        raise UnsupportedDimensionError("the flux diagnostic is implemented for n = 4")
    radii = np.asarray(radii if radii is not None else np.geomspace(1.0, m.r_max, 25), dtype=float)
    _check_coverage(m, radii)
    if m.jet is not None and (report is None or report.method == "analytic"):
        loc = local_geometry(m, radii, "analytic")
        dR, u = loc.dR, loc.u
    else:
        if report is None:
            from .curvature import curvature_report

            report = curvature_report(m, method="fd")
        if radii.max() > report.nodes[-1] or radii.min() < report.nodes[0]:
            raise CoverageError("flux radii outside the report's nodes")
        dR = RadialProfile(report.nodes, report.dR)(radii)
        u = m.u_at(radii)
    F = sphere_area(4) * radii**3 * np.exp(2 * u) * dR
    return [(float(r), float(f)) for r, f in zip(radii, F)]


def annulus_scalar_bound(m: ConformalMetric, radii) -> list[tuple[float, float, float]]:
    """(r, mean of Delta u over B_2r minus B_r, Hoelder bound on that mean).

    Delta u <= max(W, 0) = R^- e^{2u} / (2(n-1)); Hoelder in dx then gives
    (1/(2(n-1))) (int (R^-)^{n/2} dv)^{2/n} |ann|^{(n-2)/n} for the integral.
    """
    n = m.n
    radii = np.asarray(radii, dtype=float)
    _check_coverage(m, 2 * radii)
    left = annulus_flux_average(m.du_at, n, radii)
    rm = _curvature_densities(m)[1]
    ann = omega_n(n) * (2.0**n - 1) * radii**n
    out = []
    for r, lhs, vol in zip(radii, left, ann):
        if isinstance(rm, RadialProfile):
            edges = np.linspace(r, 2 * r, 9)
            integral = float(np.sum(panel_integrals(rm, edges)))
        else:
            edges = adaptive_breaks(rm, np.linspace(r, 2 * r, 9), rtol=1e-12)
            integral = float(np.sum(panel_integrals(rm, edges)))
        bound = integral ** (2 / n) * vol ** ((n - 2) / n) / (2 * (n - 1)) / vol
        out.append((float(r), float(lhs), float(bound)))
    return out
