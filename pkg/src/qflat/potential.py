"""Logarithmic potential of a radial Q-density and the normality diagnostics.

For radial P the potential v(x) = (1/c_n) int log(|y|/|x-y|) P(y) dy reduces
to one-dimensional moment integrals through the sphere mean of the kernel.
With r = |x|, s = |y|, M = max(r, s), m = min(r, s):

    n = 2:  mean over |y| = s of log|x - y| = log M
    n = 4:  mean over |y| = s of log|x - y| = log M + m^2 / (4 M^2)

The n = 4 correction term is what makes (-Delta)^2 v = 2P hold; it also
means the shells outside |x| contribute in four dimensions.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .conventions import (
    CoverageError,
    InvalidDimensionError,
    QflatError,
    c_n,
    check_even_dimension,
    conventions_block,
    sphere_area,
)
from .curvature import ConformalMetric, RadialJet
from .field import (
    AnalyticField,
    GridField,
    RadialProfile,
    adaptive_breaks,
    annulus_flux_average,
    derivatives,
    gauss_legendre,
    make_nodes,
    panel_integrals,
    radial_breaks,
    radial_laplacian,
    sphere_average,
)

# moment weights g(s) multiplying w(s) = |S^{n-1}| s^{n-1} P(s)
_MOMENTS = ("mass", "log", "sq", "invsq")


def _moment_weight(name: str, s):
    if name == "mass":
        return np.ones_like(s)
    if name == "log":
        return np.log(s)
    if name == "sq":
        return s * s
    return 1.0 / (s * s)


class QDensity:
    """Radial Q-density P = Q e^{nu} with cached moment tables.

    P is taken to vanish beyond ``s_max`` (default: the profile's last
    node).  ``dP``/``d2P`` are optional exact derivatives of P, used only
    to complete the n = 2 potential jet.
    """

    def __init__(
        self,
        P: RadialProfile,
        n: int,
        breakpoints: Sequence[float] = (),
        s_max: float | None = None,
        dP: Callable | None = None,
        d2P: Callable | None = None,
        rtol: float = 1e-13,
    ):
        self.n = check_even_dimension(n)
        self.P = P
        self.breakpoints = tuple(float(b) for b in breakpoints)
        self.s_max = float(s_max if s_max is not None else P.r_max)
        self.dP = dP
        self.d2P = d2P
        self.rtol = rtol
        if P.tail is not None and (P.tail.beta != 0.0 or P.tail.c != 0.0):
            raise QflatError("a log-form tail does not decay; P must be integrable")
        self._check_decay()

    def _check_decay(self):
        s = np.geomspace(self.s_max / 10, self.s_max, 16)
        vals = np.abs(self.P(s))
        if np.all(vals == 0) or self.P.func is None:
            return
        peak = float(np.max(np.abs(self.P(np.linspace(0, self.s_max, 2001)))))
        if vals[-1] <= 1e-14 * max(peak, 1e-300):
            return
        keep = vals > 0
        slope = np.polyfit(np.log(s[keep]), np.log(vals[keep]), 1)[0]
        if slope >= -self.n:
            raise QflatError(f"P decays like s^{slope:.2f}; needs faster than s^-{self.n}")

    @cached_property
    def area(self) -> float:
        return sphere_area(self.n)

    def w(self, s):
        """Radial mass density |S^{n-1}| s^{n-1} P(s)."""
        s = np.asarray(s, dtype=float)
        return self.area * s ** (self.n - 1) * self.P(s)

    @cached_property
    def breaks(self) -> np.ndarray:
        start = radial_breaks(0.0, self.s_max, scale=1.0, ratio=1.05, extra=self.breakpoints)
        return adaptive_breaks(lambda s: np.abs(self.w(s)) * (1 + np.abs(np.log(s))), start, rtol=self.rtol)

    @cached_property
    def _tables(self) -> dict:
        tables = {}
        for name in _MOMENTS:
            panels = panel_integrals(lambda s, nm=name: self.w(s) * _moment_weight(nm, s), self.breaks)
            prefix = np.concatenate([[0.0], np.cumsum(panels)])
            suffix = np.concatenate([np.cumsum(panels[::-1])[::-1], [0.0]])
            tables[name] = (prefix, suffix)
        absw = panel_integrals(lambda s: np.abs(self.w(s)), self.breaks)
        tables["abs"] = (np.concatenate([[0.0], np.cumsum(absw)]), None)
        return tables

    @property
    def total(self) -> float:
        """int_{R^n} P dx."""
        return float(self._tables["mass"][0][-1])

    @property
    def total_abs(self) -> float:
        return float(self._tables["abs"][0][-1])

    @property
    def alpha(self) -> float:
        """total / c_n, the asymptotic slope of -v against log r."""
        return self.total / c_n(self.n)

    def moments(self, r) -> dict:
        """Prefix integrals int_0^r w g ds for every moment, plus the suffix of 'invsq'."""
        r = np.asarray(r, dtype=float)
        flat = np.atleast_1d(r).ravel()
        b = self.breaks
        clipped = np.clip(flat, 0.0, b[-1])
        j = np.clip(np.searchsorted(b, clipped, side="right") - 1, 0, len(b) - 2)
        lo = b[j]
        x, wts = gauss_legendre(16)
        half = 0.5 * (clipped - lo)
        pts = (0.5 * (clipped + lo))[:, None] + half[:, None] * x[None, :]
        pts = np.where(pts > 0, pts, 1.0)  # zero-length panels; masked below
        wv = self.w(pts)
        out = {}
        for name in _MOMENTS:
            prefix, suffix = self._tables[name]
            part = np.where(half > 0, half * ((wv * _moment_weight(name, pts)) @ wts), 0.0)
            out[name] = (prefix[j] + part).reshape(r.shape)
            if name == "invsq":
                out["invsq_tail"] = (suffix[j] - part).reshape(r.shape)
        return out

    def to_profile_csv(self) -> str:
        return self.P.to_csv()


def _require_potential_dim(n: int):
    if n not in (2, 4):
        raise InvalidDimensionError("the radial log-kernel reduction is implemented for n in {2, 4}")


def _check_radius(P: QDensity, r):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise CoverageError("radius must be nonnegative")
    return r


def _potential_parts(P: QDensity, r):
    """v, v', Delta v, (Delta v)', (Delta v)'' at radii r."""
    n = P.n
    _require_potential_dim(n)
    r = _check_radius(P, r)
    c = c_n(n)
    mom = P.moments(r)
    m0, mlog, m2, jt = mom["mass"], mom["log"], mom["sq"], mom["invsq_tail"]
    pos = r > 0
    rs = np.where(pos, r, 1.0)
    logr = np.log(rs)
    Pr = P.P(r)
    if n == 2:
        v = np.where(pos, -(logr * m0 - mlog) / c, 0.0)
        dv = np.where(pos, -m0 / rs / c, 0.0)
        scale = -P.area / c
        lap = scale * Pr
        dlap = scale * (P.dP(r) if P.dP is not None else _fd(P.P, r, 1))
        d2lap = scale * (P.d2P(r) if P.d2P is not None else _fd(P.P, r, 2))
        return v, dv, lap, dlap, d2lap
    v = np.where(pos, -(logr * m0 - mlog + m2 / (4 * rs**2) + rs**2 * jt / 4) / c, 0.0)
    dv = np.where(pos, -(m0 / rs - m2 / (2 * rs**3) + rs * jt / 2) / c, 0.0)
    lap = -2.0 * (np.where(pos, m0 / rs**2, 0.0) + jt) / c
    dlap = np.where(pos, 4.0 * m0 / rs**3 / c, 0.0)
    area = P.area
    d2lap = np.where(pos, 4.0 * (area * Pr - 3.0 * m0 / rs**4) / c, area * Pr / c)
    return v, dv, lap, dlap, d2lap


def _fd(func, r, order, h=1e-4):
    r = np.asarray(r, dtype=float)
    step = h * np.maximum(1.0, r)
    base = np.abs(r)
    f = lambda x: func(np.abs(x))  # noqa: E731  (even extension)
    if order == 1:
        return (f(base - 2 * step) - 8 * f(base - step) + 8 * f(base + step) - f(base + 2 * step)) / (12 * step)
    return (-f(base - 2 * step) + 16 * f(base - step) - 30 * f(base) + 16 * f(base + step) - f(base + 2 * step)) / (
        12 * step**2
    )


def log_potential(P: QDensity, r):
    """v(r) = (1/c_n) int log(|y|/|x-y|) P(y) dy at |x| = r."""
    out = _potential_parts(P, r)[0]
    return float(out) if np.ndim(out) == 0 else out


def log_potential_gradient(P: QDensity, r):
    """Radial derivative v'(r)."""
    out = _potential_parts(P, r)[1]
    return float(out) if np.ndim(out) == 0 else out


def potential_laplacian(P: QDensity, r):
    out = _potential_parts(P, r)[2]
    return float(out) if np.ndim(out) == 0 else out


def potential_jet(P: QDensity, shift: float = 0.0) -> RadialJet:
    """Exact jet of v + shift, for building potential metrics."""

    def fn(r):
        v, dv, lap, dlap, d2lap = _potential_parts(P, r)
        return v + shift, dv, lap, dlap, d2lap

    return RadialJet(fn)


def potential_metric(P: QDensity, nodes=None, constant: float = 0.0, label: str = "potential") -> ConformalMetric:
    """The normal metric u = v + constant built from P."""
    if nodes is None:
        nodes = make_nodes()
    nodes = np.asarray(nodes, dtype=float)
    jet = potential_jet(P, constant)
    from .field import LogTail

    u = jet(nodes)[0]
    tail = None
    if nodes[-1] > P.s_max:
        beta = -P.alpha
        tail = LogTail(beta, float(u[-1] - beta * math.log(nodes[-1])), float(nodes[-1]))
    prof = RadialProfile(nodes, u, tail=tail, func=lambda r: jet(r)[0])
    return ConformalMetric(P.n, prof, label, jet, P.breakpoints)


# --- reference densities -----------------------------------------------------


def ring_density(n: int, total: float, center: float = 1.0, width: float = 0.1, nodes=None) -> QDensity:
    """Gaussian shell exp(-(s - center)^2 / (2 width^2)) normalized to ``total``."""
    n = check_even_dimension(n)
    area = sphere_area(n)
    shape = lambda s: np.exp(-0.5 * ((np.asarray(s) - center) / width) ** 2)  # noqa: E731
    s_max = center + 40 * width
    lo = max(center - 40 * width, 0.0)
    probe = np.linspace(lo, s_max, 20001)
    breaks = np.concatenate([[0.0], probe[::200]])
    base = float(np.sum(panel_integrals(lambda s: area * s ** (n - 1) * shape(s), adaptive_breaks(
        lambda s: area * s ** (n - 1) * shape(s), breaks, rtol=1e-14))))
    amp = total / base

    def P(s):
        return amp * shape(s)

    def dP(s):
        z = (np.asarray(s) - center) / width
        return -amp * z / width * np.exp(-0.5 * z * z)

    def d2P(s):
        z = (np.asarray(s) - center) / width
        return amp * (z * z - 1) / width**2 * np.exp(-0.5 * z * z)

    nodes = make_nodes(s_max, 2000) if nodes is None else nodes
    feats = tuple(center + width * np.arange(-8, 9))
    feats = tuple(f for f in feats if f > 0)
    return QDensity(RadialProfile.from_function(P, nodes), n, feats, s_max, dP, d2P)


def gaussian_density(n: int, total: float, width: float = 1.0, nodes=None) -> QDensity:
    """Centred Gaussian exp(-s^2 / (2 width^2)) normalized to ``total``."""
    n = check_even_dimension(n)
    amp = total / (2 * math.pi * width**2) ** (n / 2)

    def P(s):
        return amp * np.exp(-0.5 * (np.asarray(s) / width) ** 2)

    def dP(s):
        s = np.asarray(s)
        return -s / width**2 * P(s)

    def d2P(s):
        s = np.asarray(s)
        return (s * s / width**4 - 1 / width**2) * P(s)

    s_max = 40 * width
    nodes = make_nodes(s_max, 2000) if nodes is None else nodes
    return QDensity(RadialProfile.from_function(P, nodes), n, (), s_max, dP, d2P)


def density_from_metric(m: ConformalMetric, s_max: float | None = None) -> QDensity:
    """P = Q e^{nu} of a metric, exact when the metric has a jet."""
    n = m.n
    if m.jet is not None:
        from .curvature import local_geometry

        def P(s):
            s = np.asarray(s, dtype=float)
            flat = s.ravel()
            return local_geometry(m, flat, "analytic").q_density.reshape(s.shape)

        prof = RadialProfile.from_function(P, m.nodes)
    else:
        from .curvature import curvature_report

        rep = curvature_report(m, method="fd")
        prof = RadialProfile(rep.nodes, rep.q_density)
    return QDensity(prof, n, m.breakpoints, s_max if s_max is not None else prof.r_max)


# --- normality ------------------------------------------------------------------


@dataclass
class NormalityReport:
    h: RadialProfile
    probes: np.ndarray
    lap_h_annulus: np.ndarray
    grad_v_sq_annulus: np.ndarray
    envelope: np.ndarray
    verdict: str
    h_spread: float
    lap_u_sup: float
    label: str = ""
    n: int = 4

    def rows(self):
        return list(zip(self.probes, self.h.values, self.lap_h_annulus, self.grad_v_sq_annulus))

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "h_spread": float(self.h_spread),
            "lap_u_sup": float(self.lap_u_sup),
            "label": self.label,
            "probes": [
                {"r": float(r), "h": float(h), "lap_h_avg": float(a), "grad_v_sq_avg": float(g), "envelope": float(e)}
                for (r, h, a, g), e in zip(self.rows(), self.envelope)
            ],
            "conventions": conventions_block(self.n),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("r,h,lap_h_avg,grad_v_sq_avg,envelope\n")
        for (r, h, a, g), e in zip(self.rows(), self.envelope):
            buf.write(f"{r:.17g},{h:.17g},{a:.17g},{g:.17g},{e:.17g}\n")
        return buf.getvalue()


def default_probes(m: ConformalMetric, count: int = 17) -> np.ndarray:
    """Dyadic radii 1, 2, 4, ... whose annuli [r, 2r] lie inside the metric's coverage."""
    radii = 2.0 ** np.arange(count)
    return radii[2 * radii <= m.r_max]


def _lap_u(m: ConformalMetric, r):
    if m.jet is not None:
        return m.jet(r)[2]
    return RadialProfile(m.nodes, radial_laplacian(m.profile, m.n).values)(r)


def _grad_sq_average(dv: Callable, n: int, radii, panels: int = 8):
    radii = np.asarray(radii, dtype=float)
    x, w = gauss_legendre(16)
    edges = radii[:, None] * (1 + np.arange(panels + 1)[None, :] / panels)
    a, b = edges[:, :-1], edges[:, 1:]
    half = 0.5 * (b - a)
    pts = (0.5 * (a + b))[..., None] + half[..., None] * x
    vals = dv(pts) ** 2 * pts ** (n - 1)
    num = np.sum(half * (vals @ w), axis=1)
    den = (2.0**n - 1.0) * radii**n / n
    return num / den


def normality_residual(
    m: ConformalMetric,
    P: QDensity,
    probes=None,
    h_tol: float = 1e-4,
    lap_tol: float = 1e-4,
    violation_factor: float = 10.0,
    consecutive: int = 3,
) -> NormalityReport:
    """Measure h = u - v and the annulus averages of Delta h at the probe radii."""
    if P.n != m.n:
        raise InvalidDimensionError("metric and density dimensions differ")
    probes = default_probes(m) if probes is None else np.sort(np.asarray(probes, dtype=float))
    if m.jet is None:
        prof = m.profile
        limit = math.inf if prof.tail is not None else prof.r_max
        if np.any(2 * probes > limit * (1 + 1e-12)) or np.any(probes < prof.r_min):
            raise CoverageError("probe annulus outside the metric's coverage")
    n = m.n
    v = log_potential(P, probes)
    h_vals = m.u_at(probes) - v
    dh = lambda r: m.du_at(r) - log_potential_gradient(P, r)  # noqa: E731
    lap_h = annulus_flux_average(dh, n, probes)
    grad_v = _grad_sq_average(lambda r: log_potential_gradient(P, r), n, probes)
    lap_u_sup = float(np.max(np.abs(_lap_u(m, probes))))
    envelope = lap_tol * (1 + probes) ** -2 * max(1.0, lap_u_sup)
    spread = float(np.max(h_vals) - np.min(h_vals))
    within = np.abs(lap_h) < envelope
    if spread < h_tol and np.all(within):
        verdict = "normal"
    else:
        bad = np.abs(lap_h) > violation_factor * envelope
        run = best = 0
        for flag in bad:
            run = run + 1 if flag else 0
            best = max(best, run)
        verdict = "non-normal" if best >= consecutive else "inconclusive"
    return NormalityReport(
        RadialProfile(probes, h_vals), probes, lap_h, grad_v, envelope, verdict, spread, lap_u_sup, m.label, n
    )


def annulus_decay_series(P: QDensity, radii) -> list[tuple[float, float, float]]:
    """(r, mean |grad v|^2, mean Delta v) over each annulus B_{2r} minus B_r."""
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0):
        raise CoverageError("radii must be positive")
    dv = lambda r: log_potential_gradient(P, r)  # noqa: E731
    grad = _grad_sq_average(dv, P.n, radii)
    lap = annulus_flux_average(dv, P.n, radii)
    return [(float(r), float(g), float(a)) for r, g, a in zip(radii, grad, lap)]


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


# --- Pizzetti expansion -------------------------------------------------------


@dataclass(frozen=True)
class PizzettiCoefficients:
    k: int
    a: tuple

    def __str__(self) -> str:
        return " ".join(f"a{i}={c}" for i, c in enumerate(self.a, start=1))


def _even_product(lo: int, hi: int) -> int:
    """lo * (lo + 2) * ... * hi, or 1 when the range is empty."""
    return math.prod(range(lo, hi + 1, 2)) if hi >= lo else 1


def pizzetti_coefficient(k: int, j: int) -> Fraction:
    """a_{k-j} = 1 / ([2*4*...*(2(k-j)-2)] * [(2k)(2k+2)...(4(k-1)-2j)])."""
    return Fraction(1, _even_product(2, 2 * (k - j) - 2) * _even_product(2 * k, 4 * (k - 1) - 2 * j))


def pizzetti_coefficients(k: int) -> PizzettiCoefficients:
    """Coefficients a_1..a_{k-1} of the spherical-mean expansion in R^{2k}."""
    if int(k) != k or k < 2:
        raise ValueError("k must be an integer >= 2")
    k = int(k)
    coeffs = {k - j: pizzetti_coefficient(k, j) for j in range(1, k)}
    return PizzettiCoefficients(k, tuple(coeffs[i] for i in range(1, k)))


def spherical_mean_expansion_check(h: AnalyticField, p, r: float, k: int | None = None, degree: int | None = None) -> float:
    """|mean of Delta h over the sphere - sum_j a_j r^{2(j-1)} Delta^j h(p)| for polyharmonic h."""
    n = h.n
    k = n // 2 if k is None else k
    p = np.asarray(p, dtype=float)
    coeffs = pizzetti_coefficients(k).a
    left = sphere_average(h.iterated_laplacian(1), p, r, degree)
    right = 0.0
    for j, a in enumerate(coeffs, start=1):
        right += float(a) * r ** (2 * (j - 1)) * float(h.iterated_laplacian(j)(p))
    return abs(left - right)


# --- oracles ---------------------------------------------------------------------


_GAUSS_LOG_2D = -math.pi * np.euler_gamma / 2  # int_{R^2} log|z| e^{-|z|^2} dz


def _lattice_log_integral(grid: GridField, ax: np.ndarray, centre: tuple[float, float], func_at_centre: float) -> float:
    """int log|y - centre| P(y) dy on the lattice, with a Gaussian singularity subtraction."""
    X, Y = np.meshgrid(ax - centre[0], ax - centre[1], indexing="ij")
    d2 = X * X + Y * Y
    with np.errstate(divide="ignore", invalid="ignore"):
        logd = 0.5 * np.log(d2)
        integrand = np.where(d2 > 0, logd * (grid.values - func_at_centre * np.exp(-d2)), 0.0)
    return float(np.sum(integrand) * grid.h**2 + func_at_centre * _GAUSS_LOG_2D)


def grid_potential_2d(P: QDensity, r: float, h: float = 0.01, L: float = 10.0) -> float:
    """Oracle: full tensor-grid quadrature of v at x = (r, 0) in R^2.

    r must be a multiple of h so that x is a lattice point; the log
    singularities at 0 and x are removed with a Gaussian whose log moment
    is known in closed form.
    """
    if P.n != 2:
        raise InvalidDimensionError("the grid oracle is two-dimensional")
    if abs(r / h - round(r / h)) > 1e-9:
        raise ValueError("r must be a multiple of the grid spacing")
    grid = GridField.sample(lambda pts: P.P(np.sqrt(np.sum(pts**2, axis=-1))), 2, h, L)
    ax = GridField.axis(h, L)
    at_origin = _lattice_log_integral(grid, ax, (0.0, 0.0), float(P.P(0.0)))
    at_x = _lattice_log_integral(grid, ax, (round(r / h) * h, 0.0), float(P.P(r)))
    return (at_origin - at_x) / c_n(2)


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    stderr: float
    samples: int


def monte_carlo_potential(P: QDensity, radii, samples: int = 400_000, seed: int = 0) -> list[MonteCarloEstimate]:
    """Oracle: sample y ~ |P| in R^n and average log(|y|/|x-y|) at x = r e_1.

    Each radius draws from its own child of one SeedSequence so results do
    not depend on how many radii are requested before it.
    """
    n = P.n
    grid = make_nodes(P.s_max, 200_001, r_scale=min(1.0, P.s_max / 10))
    cdf = np.concatenate([[0.0], np.cumsum(panel_integrals(lambda s: np.abs(P.w(s)), grid))])
    total_abs = cdf[-1]
    cdf = cdf / total_abs
    children = np.random.SeedSequence(seed).spawn(len(np.atleast_1d(radii)))
    out = []
    for r, child in zip(np.atleast_1d(radii), children):
        rng = np.random.default_rng(child)
        s = np.interp(rng.random(samples), cdf, grid)
        dirs = rng.standard_normal((samples, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        y = s[:, None] * dirs
        x = np.zeros(n)
        x[0] = r
        sign = np.sign(P.P(s))
        vals = sign * (np.log(np.linalg.norm(y, axis=1)) - np.log(np.linalg.norm(y - x, axis=1)))
        scale = total_abs / c_n(n)
        out.append(MonteCarloEstimate(scale * vals.mean(), scale * vals.std(ddof=1) / math.sqrt(samples), samples))
    return out
