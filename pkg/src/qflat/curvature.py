"""Pointwise curvature of g = e^{2u}|dx|^2 for radial u.

Two routes produce the same quantities:

* ``"analytic"`` uses a :class:`RadialJet` (u, u', Delta u and two radial
  derivatives of Delta u, all exact) and closed radial formulas;
* ``"fd"`` differentiates the sampled profile with the stencils of
  :mod:`qflat.field`, trimming boundary nodes where stencils go one-sided.

For radial u the Schouten tensor A = -Hess u + du du - |du|^2/2 delta has
one radial eigenvalue a_r = -u'' + u'^2/2 and n-1 tangential ones
a_t = -u'/r - u'^2/2 (flat frame; multiply by e^{-2u} for the g frame).
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .conventions import (
    NodeMismatchError,
    UnsupportedDimensionError,
    check_even_dimension,
    conventions_block,
)
from .field import (
    HALF,
    AnalyticField,
    RadialProfile,
    derivatives,
    radial_laplacian,
    radial_polyharmonic,
)

DEFAULT_TOL = 1e-6


@dataclass(frozen=True)
class RadialJet:
    """Exact radial data for u.

    ``fn(r)`` returns the tuple (u, u', Delta u, (Delta u)', (Delta u)'').
    Everything else (u'', u''', Delta^2 u) follows from the radial
    Laplacian identities, so the jet is consistent by construction.
    """

    fn: Callable

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return tuple(np.broadcast_to(np.asarray(a, dtype=float), r.shape) for a in self.fn(r))

    def shifted(self, c: float) -> "RadialJet":
        def fn(r):
            u, du, lap, dlap, d2lap = self(r)
            return u + c, du, lap, dlap, d2lap

        return RadialJet(fn)


@dataclass(frozen=True, eq=False)
class ConformalMetric:
    """g = e^{2u}|dx|^2 on R^n with radial conformal factor u.

    ``u`` carries the default node set; ``jet`` (optional) gives exact
    derivatives; ``breakpoints`` marks radii where u changes on a short
    scale so that quadratures can place panel edges there.
    """

    n: int
    u: RadialProfile | AnalyticField
    label: str = ""
    jet: RadialJet | None = None
    breakpoints: tuple = ()

    def __post_init__(self):
        check_even_dimension(self.n)
        if isinstance(self.u, AnalyticField) and self.u.n != self.n:
            raise ValueError("field dimension does not match metric dimension")

    @property
    def profile(self) -> RadialProfile:
        if isinstance(self.u, RadialProfile):
            return self.u
        raise TypeError("metric built from an AnalyticField has no default nodes; sample it first")

    @property
    def nodes(self) -> np.ndarray:
        return self.profile.nodes

    @property
    def r_max(self) -> float:
        return self.profile.r_max

    def u_at(self, r):
        r = np.asarray(r, dtype=float)
        if self.jet is not None:
            return self.jet(r)[0]
        if isinstance(self.u, AnalyticField):
            pts = np.zeros(r.shape + (self.n,))
            pts[..., 0] = r
            return self.u(pts)
        return self.u(r)

    def du_at(self, r):
        """Radial derivative u'(r); exact with a jet, spline of FD values otherwise."""
        r = np.asarray(r, dtype=float)
        if self.jet is not None:
            return self.jet(r)[1]
        d1, _ = derivatives(self.profile)
        return RadialProfile(self.nodes, d1)(r)

    def sampled(self, nodes=None) -> "ConformalMetric":
        """Same metric with u materialized as samples (drops the jet)."""
        if nodes is None:
            nodes = self.nodes
        nodes = np.asarray(nodes, dtype=float)
        return ConformalMetric(self.n, RadialProfile(nodes, self.u_at(nodes)), self.label + " (sampled)", None, self.breakpoints)

    def shifted(self, c: float) -> "ConformalMetric":
        """The metric with u replaced by u + c."""
        prof = self.profile
        new = RadialProfile(prof.nodes, prof.values + c, func=(lambda r, f=prof.func: f(r) + c) if prof.func else None)
        jet = self.jet.shifted(c) if self.jet is not None else None
        return ConformalMetric(self.n, new, f"{self.label}+{c:g}", jet, self.breakpoints)


@dataclass
class _Local:
    r: np.ndarray
    u: np.ndarray
    du: np.ndarray
    d2u: np.ndarray
    W: np.ndarray
    R: np.ndarray
    dR: np.ndarray | None
    lapR: np.ndarray | None
    lapgR: np.ndarray | None
    q_density: np.ndarray
    method: str


def _route(m: ConformalMetric, method: str) -> str:
    if method == "auto":
        return "analytic" if m.jet is not None else "fd"
    if method == "analytic" and m.jet is None:
        raise ValueError("analytic route needs a metric with a jet")
    if method not in ("analytic", "fd"):
        raise ValueError(f"unknown method {method!r}")
    return method


def _safe_div(num, r, at_zero):
    out = np.empty_like(num)
    pos = r > 0
    out[pos] = num[pos] / r[pos]
    out[~pos] = at_zero[~pos] if np.ndim(at_zero) else at_zero
    return out


def _analytic_local(m: ConformalMetric, nodes) -> _Local:
    n = m.n
    if n > 4:
        raise UnsupportedDimensionError("the analytic route covers n in {2, 4}")
    r = np.asarray(nodes, dtype=float)
    u, du, lap, dlap, d2lap = m.jet(r)
    k = (n - 2) / 2.0
    d2u = lap - (n - 1) * _safe_div(du, r, lap / n)
    # u''' = (Delta u)' - (n-1)(u'' - u'/r)/r, which is 0 at the origin
    d3u = dlap - (n - 1) * _safe_div(d2u - _safe_div(du, r, d2u), r, 0.0)
    W = lap + k * du**2
    dW = dlap + 2 * k * du * d2u
    d2W = d2lap + 2 * k * (d2u**2 + du * d3u)
    e2 = np.exp(-2 * u)
    c = -2.0 * (n - 1)
    R = c * e2 * W
    dR = c * e2 * (dW - 2 * du * W)
    d2R = c * e2 * (d2W - 4 * du * dW - 2 * d2u * W + 4 * du**2 * W)
    lapR = d2R + (n - 1) * _safe_div(dR, r, d2R)
    lapgR = e2 * (lapR + (n - 2) * du * dR)
    if n == 2:
        q_density = -lap / 2.0
    else:
        bilap = d2lap + (n - 1) * _safe_div(dlap, r, d2lap)
        q_density = bilap / 2.0
    return _Local(r, u, du, d2u, W, R, dR, lapR, lapgR, q_density, "analytic")


def _fd_local(m: ConformalMetric, nodes) -> _Local:
    n = m.n
    prof = m.profile
    if nodes is not None and not np.array_equal(np.asarray(nodes, dtype=float), prof.nodes):
        raise NodeMismatchError("the fd route evaluates on the profile's own nodes")
    levels = 1 if n == 2 else max(n // 2, 2)
    left = 0 if prof.reflects else HALF * levels
    right = HALF * levels
    if len(prof) < 4 * levels + 1:
        from .conventions import DegenerateGridError

        raise DegenerateGridError(f"need at least {4 * levels + 1} nodes")
    du, d2u = derivatives(prof)
    lap = radial_laplacian(prof, n).values
    u = prof.values
    W = lap + (n - 2) / 2.0 * du**2
    R = -2.0 * (n - 1) * np.exp(-2 * u) * W
    poly = radial_polyharmonic(prof, n, n // 2)
    sign = (-1) ** (n // 2)
    q_full = np.full(len(prof), np.nan)
    q_full[poly.trimmed[0] : len(prof) - poly.trimmed[1]] = sign * poly.values / 2.0
    dR = lapR = lapgR = None
    if n >= 4:
        Rp = RadialProfile(prof.nodes, R)
        dR, _ = derivatives(Rp)
        lapR = radial_laplacian(Rp, n).values
        lapgR = np.exp(-2 * u) * (lapR + (n - 2) * du * dR)
    sl = slice(left, len(prof) - right)
    pick = lambda a: None if a is None else a[sl]  # noqa: E731
    return _Local(
        prof.nodes[sl], u[sl], du[sl], d2u[sl], W[sl], R[sl], pick(dR), pick(lapR), pick(lapgR), q_full[sl], "fd"
    )


def local_geometry(m: ConformalMetric, nodes=None, method: str = "auto") -> _Local:
    route = _route(m, method)
    if route == "analytic":
        return _analytic_local(m, m.nodes if nodes is None else nodes)
    return _fd_local(m, nodes)


def _schouten_eigen(loc: _Local):
    r, du, d2u = loc.r, loc.du, loc.d2u
    a_r = -d2u + du**2 / 2
    a_t = -_safe_div(du, r, d2u) - du**2 / 2
    e2 = np.exp(-2 * loc.u)
    return a_r * e2, a_t * e2


def _require_four(m: ConformalMetric):
    if m.n != 4:
        raise UnsupportedDimensionError("this quantity is implemented for n = 4 only")


def _sigma2(loc: _Local, n: int) -> np.ndarray:
    lr, lt = _schouten_eigen(loc)
    return (n - 1) * lr * lt + (n - 1) * (n - 2) / 2 * lt**2


def _traceless_sq(loc: _Local, n: int) -> np.ndarray:
    lr, lt = _schouten_eigen(loc)
    tr = lr + (n - 1) * lt
    mean = tr / n
    # E = (n-2)(A - tr A / n g)
    return (n - 2) ** 2 * ((lr - mean) ** 2 + (n - 1) * (lt - mean) ** 2)


def scalar_curvature(m: ConformalMetric, nodes=None, method: str = "auto") -> RadialProfile:
    """R = -2(n-1) e^{-2u} (Delta u + (n-2)/2 |grad u|^2)."""
    if _route(m, method) == "fd":
        prof = m.profile
        du, _ = derivatives(prof)
        lap = radial_laplacian(prof, m.n).values
        W = lap + (m.n - 2) / 2.0 * du**2
        return prof.with_values(-2.0 * (m.n - 1) * np.exp(-2 * prof.values) * W)
    loc = local_geometry(m, nodes, "analytic")
    return RadialProfile(loc.r, loc.R)


def q_curvature(m: ConformalMetric, nodes=None, method: str = "auto") -> RadialProfile:
    """Q = (-Delta)^{n/2} u e^{-nu} / 2."""
    n = m.n
    if _route(m, method) == "fd":
        prof = m.profile
        poly = radial_polyharmonic(prof, n, n // 2)
        u = prof.values[poly.trimmed[0] : len(prof) - poly.trimmed[1]]
        q = (-1) ** (n // 2) * poly.values / 2.0 * np.exp(-n * u)
        return RadialProfile(poly.nodes, q, trimmed=poly.trimmed)
    loc = local_geometry(m, nodes, "analytic")
    return RadialProfile(loc.r, loc.q_density * np.exp(-n * loc.u))


def sigma2_schouten(m: ConformalMetric, nodes=None, method: str = "auto") -> RadialProfile:
    """Second elementary symmetric function of the Schouten tensor (n = 4)."""
    _require_four(m)
    if _route(m, method) == "fd":
        prof = m.profile
        du, d2u = derivatives(prof)
        loc = _Local(prof.nodes, prof.values, du, d2u, du, du, None, None, None, du, "fd")
        return prof.with_values(_sigma2(loc, m.n))
    return RadialProfile(*_pair(m, nodes, _sigma2))


def traceless_ricci_norm_sq(m: ConformalMetric, nodes=None, method: str = "auto") -> RadialProfile:
    """|E|_g^2 with E the traceless Ricci tensor (n = 4)."""
    _require_four(m)
    if _route(m, method) == "fd":
        prof = m.profile
        du, d2u = derivatives(prof)
        loc = _Local(prof.nodes, prof.values, du, d2u, du, du, None, None, None, du, "fd")
        return prof.with_values(_traceless_sq(loc, m.n))
    return RadialProfile(*_pair(m, nodes, _traceless_sq))


def _pair(m, nodes, fn):
    loc = local_geometry(m, nodes, "analytic")
    return loc.r, fn(loc, m.n)


def conformal_laplacian_on_function(m: ConformalMetric, f: RadialProfile) -> RadialProfile:
    """Delta_g f = e^{-2u}(Delta f + (n-2) <grad u, grad f>)."""
    if m.jet is None:
        if not np.array_equal(f.nodes, m.nodes):
            raise NodeMismatchError("f must be sampled on the metric's nodes")
        du, _ = derivatives(m.profile)
        u = m.profile.values
    else:
        u, du = m.jet(f.nodes)[:2]
    df, _ = derivatives(f)
    lap = radial_laplacian(f, m.n).values
    return f.with_values(np.exp(-2 * u) * (lap + (m.n - 2) * du * df))


@dataclass(eq=False)
class CurvatureReport:
    """Curvature samples along a radius grid.

    ``sigma2``, ``E_norm_sq`` and ``lapg_R`` are populated for n = 4 only.
    ``q_density`` is Q e^{nu} = (-Delta)^{n/2}u / 2 and ``dR`` is R'(r);
    both are kept for integrals and fluxes that would otherwise have to
    multiply tiny and huge exponentials.
    """

    n: int
    nodes: np.ndarray
    R: np.ndarray
    R_minus: np.ndarray
    Q: np.ndarray
    u: np.ndarray
    q_density: np.ndarray
    sigma2: np.ndarray | None = None
    E_norm_sq: np.ndarray | None = None
    lapg_R: np.ndarray | None = None
    dR: np.ndarray | None = None
    method: str = "analytic"
    tol: float = DEFAULT_TOL
    label: str = ""
    warnings: list = field(default_factory=list)

    def _scale(self) -> np.ndarray:
        # the largest term either identity is assembled from; sigma2 itself
        # is a difference of quadratic terms, so R^2 and |E|^2 enter too
        return np.maximum.reduce(
            [
                np.abs(self.Q),
                np.abs(self.lapg_R) / 12.0,
                2.0 * np.abs(self.sigma2),
                self.R**2 / 48.0,
                self.E_norm_sq / 4.0,
            ]
        )

    def residual_decomposition(self) -> np.ndarray | None:
        """|Q - (-lapg_R/12 + 2 sigma2)| relative to the pointwise curvature scale."""
        if self.n != 4:
            return None
        diff = self.Q - (-self.lapg_R / 12.0 + 2.0 * self.sigma2)
        return _relative(diff, self._scale())

    def residual_eq12(self) -> np.ndarray | None:
        """Residual of Q = (-lapg_R + R^2/4 - 3|E|^2) / 12 on the same scale."""
        if self.n != 4:
            return None
        rhs = (-self.lapg_R + self.R**2 / 4.0 - 3.0 * self.E_norm_sq) / 12.0
        return _relative(self.Q - rhs, self._scale())

    def residual_maxima(self) -> dict:
        out = {}
        for key, fn in (("decomposition", self.residual_decomposition), ("eq12", self.residual_eq12)):
            res = fn()
            out[key] = None if res is None else float(np.max(res)) if len(res) else 0.0
        return out

    @property
    def identities_hold(self) -> bool:
        return all(v is None or v <= self.tol for v in self.residual_maxima().values())

    def columns(self) -> dict:
        return {
            "r": self.nodes,
            "R": self.R,
            "R_minus": self.R_minus,
            "Q": self.Q,
            "sigma2": self.sigma2,
            "E2": self.E_norm_sq,
            "lapgR": self.lapg_R,
        }

    def to_csv(self) -> str:
        cols = self.columns()
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        for i in range(len(self.nodes)):
            buf.write(",".join("" if v is None else f"{v[i]:.17g}" for v in cols.values()) + "\n")
        return buf.getvalue()

    def to_dict(self) -> dict:
        cols = {k: (None if v is None else [float(x) for x in v]) for k, v in self.columns().items()}
        res = self.residual_maxima()
        cols.update(
            {
                "residual_decomposition_max": res["decomposition"],
                "residual_eq12_max": res["eq12"],
                "identities_hold": self.identities_hold,
                "method": self.method,
                "label": self.label,
                "tolerance": self.tol,
                "warnings": list(self.warnings),
                "conventions": conventions_block(self.n),
            }
        )
        return cols

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _relative(diff, scale):
    diff = np.abs(diff)
    return np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), diff)


def curvature_report(m: ConformalMetric, nodes=None, method: str = "auto", tol: float = DEFAULT_TOL) -> CurvatureReport:
    """Assemble R, Q and (for n = 4) sigma2, |E|^2, Delta_g R and check both identities."""
    if m.n not in (2, 4):
        raise UnsupportedDimensionError("curvature_report supports n in {2, 4}")
    loc = local_geometry(m, nodes, method)
    n = m.n
    rep = CurvatureReport(
        n=n,
        nodes=loc.r,
        R=loc.R,
        R_minus=np.maximum(-loc.R, 0.0),
        Q=loc.q_density * np.exp(-n * loc.u),
        u=loc.u,
        q_density=loc.q_density,
        dR=loc.dR,
        method=loc.method,
        tol=tol,
        label=m.label,
    )
    if n == 4:
        rep.sigma2 = _sigma2(loc, n)
        rep.E_norm_sq = _traceless_sq(loc, n)
        rep.lapg_R = loc.lapgR
        if not rep.identities_hold:
            rep.warnings.append(
                "curvature identity residual above tolerance: "
                + ", ".join(f"{k}={v:.3g}" for k, v in rep.residual_maxima().items() if v is not None)
            )
    return rep
