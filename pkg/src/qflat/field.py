"""Scalar fields on R^n and the discrete operators built on them.

Radial profiles are the main representation.  Derivatives use 5-point
stencils whose weights come from a local Vandermonde solve, so any strictly
increasing node set works; when the first node is r = 0 the profile is
treated as even in r and reflected ghost nodes give centered stencils there.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, interpolate, special

from .conventions import (
    CoverageError,
    DegenerateGridError,
    InvalidDimensionError,
    check_even_dimension,
)

STENCIL = 5
HALF = STENCIL // 2


def make_nodes(r_max: float = 1e6, count: int = 2000, r_scale: float = 1.0) -> np.ndarray:
    """Nodes r = r_scale * sinh(t) with t uniform.

    Spacing is uniform (about r_scale * dt) below r_scale and geometric with
    ratio e^dt above it, so the map from t to r is smooth everywhere.
    """
    if r_max <= 0 or r_scale <= 0:
        raise ValueError("r_max and r_scale must be positive")
    if count < STENCIL:
        raise DegenerateGridError(f"need at least {STENCIL} nodes, got {count}")
    t = np.linspace(0.0, math.asinh(r_max / r_scale), int(count))
    nodes = r_scale * np.sinh(t)
    nodes[-1] = r_max
    return nodes


@dataclass(frozen=True)
class LogTail:
    """Analytic continuation beta * log r + c for r > rmax."""

    beta: float
    c: float
    rmax: float

    def __call__(self, r):
        return self.beta * np.log(r) + self.c

    def comment(self) -> str:
        return f"# tail: beta={self.beta!r} c={self.c!r} rmax={self.rmax!r}"

    @classmethod
    def parse(cls, line: str) -> "LogTail":
        body = line.lstrip("#").strip()
        if not body.startswith("tail:"):
            raise ValueError(f"not a tail line: {line!r}")
        parts = dict(item.split("=", 1) for item in body[len("tail:"):].split())
        return cls(float(parts["beta"]), float(parts["c"]), float(parts["rmax"]))


@dataclass(frozen=True, eq=False)
class RadialProfile:
    """A radial function sampled on ``nodes``.

    ``func``, when given, is the exact function behind the samples and is
    used for off-node evaluation; otherwise a cubic spline interpolates.
    ``trimmed`` records how many boundary nodes an operator dropped on the
    (left, right) side relative to its input.
    """

    nodes: np.ndarray
    values: np.ndarray
    tail: LogTail | None = None
    func: Callable | None = None
    continuity_tol: float = 1e-6
    trimmed: tuple[int, int] = (0, 0)

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        values = np.array(self.values, dtype=float)
        if nodes.ndim != 1 or nodes.shape != values.shape:
            raise ValueError("nodes and values must be 1-d arrays of equal length")
        if len(nodes) == 0:
            raise DegenerateGridError("empty profile")
        if nodes[0] < 0 or np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing and start at r >= 0")
        if not np.all(np.isfinite(values)):
            raise ValueError("profile values must be finite")
        nodes.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)
        if self.tail is not None:
            if not math.isclose(self.tail.rmax, nodes[-1], rel_tol=1e-12):
                raise ValueError("tail rmax must equal the last node")
            gap = abs(self.tail(nodes[-1]) - values[-1])
            if gap > self.continuity_tol * max(1.0, abs(values[-1])):
                raise ValueError(f"tail does not match the samples at rmax (gap {gap:.3g})")

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def from_function(cls, func: Callable, nodes, tail: LogTail | None = None) -> "RadialProfile":
        nodes = np.asarray(nodes, dtype=float)
        return cls(nodes, func(nodes), tail=tail, func=func)

    @property
    def r_min(self) -> float:
        return float(self.nodes[0])

    @property
    def r_max(self) -> float:
        return float(self.nodes[-1])

    @property
    def reflects(self) -> bool:
        return self.nodes[0] == 0.0

    def covers(self, a: float, b: float) -> bool:
        if self.func is not None:
            return a >= 0
        hi = math.inf if self.tail is not None else self.r_max
        return self.r_min <= a and b <= hi * (1 + 1e-12)

    @cached_property
    def _spline(self):
        if len(self.nodes) < 4:
            return interpolate.interp1d(self.nodes, self.values, kind="linear")
        bc = ((1, 0.0), "not-a-knot") if self.reflects else "not-a-knot"
        return interpolate.CubicSpline(self.nodes, self.values, bc_type=bc)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.func is not None:
            out = np.asarray(self.func(r), dtype=float)
            if self.tail is not None:
                out = np.where(r > self.r_max, self.tail(np.maximum(r, self.r_max)), out)
            return out
        lo, hi = self.r_min, self.r_max
        if np.any(r < lo * (1 - 1e-12)) or (self.tail is None and np.any(r > hi * (1 + 1e-12))):
            raise CoverageError(f"radius outside profile coverage [{lo:g}, {hi:g}]")
        inside = np.clip(r, lo, hi)
        out = np.asarray(self._spline(inside), dtype=float)
        if self.tail is not None:
            out = np.where(r > hi, self.tail(np.maximum(r, hi)), out)
        return out

    def with_values(self, values, trimmed: tuple[int, int] | None = None) -> "RadialProfile":
        return RadialProfile(self.nodes, values, trimmed=trimmed or (0, 0))

    def trim(self, left: int, right: int) -> "RadialProfile":
        stop = len(self.nodes) - right
        if stop - left < 1:
            raise DegenerateGridError("trimming removes every node")
        return RadialProfile(
            self.nodes[left:stop],
            self.values[left:stop],
            trimmed=(self.trimmed[0] + left, self.trimmed[1] + right),
        )

    def to_csv(self, target=None) -> str:
        buf = io.StringIO()
        buf.write("r,value\n")
        for r, v in zip(self.nodes, self.values):
            buf.write(f"{r:.17g},{v:.17g}\n")
        if self.tail is not None:
            buf.write(self.tail.comment() + "\n")
        text = buf.getvalue()
        if target is not None:
            with open(target, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "RadialProfile":
        if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
            with open(source, encoding="utf-8") as fh:
                text = fh.read()
        else:
            text = str(source)
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].lower().startswith("r,"):
            raise ValueError("profile CSV must start with an 'r,value' header")
        tail = None
        rows = []
        for ln in lines[1:]:
            if ln.startswith("#"):
                if "tail:" in ln:
                    tail = LogTail.parse(ln)
                continue
            r, v = ln.split(",")[:2]
            rows.append((float(r), float(v)))
        arr = np.array(rows, dtype=float)
        return cls(arr[:, 0], arr[:, 1], tail=tail)


# --- finite differences -------------------------------------------------


def _extended(nodes: np.ndarray, values: np.ndarray):
    """Prepend mirrored ghost nodes when the grid starts at r = 0."""
    if nodes[0] == 0.0:
        ghost = slice(HALF, 0, -1)
        return np.concatenate([-nodes[ghost], nodes]), np.concatenate([values[ghost], values]), HALF
    return nodes, values, 0


def _stencil_weights(nodes: np.ndarray):
    """Window indices into the extended grid plus d/dr and d2/dr2 weights."""
    ext, _, offset = _extended(nodes, nodes)
    m = len(ext)
    centre = np.arange(len(nodes)) + offset
    start = np.clip(centre - HALF, 0, m - STENCIL)
    idx = start[:, None] + np.arange(STENCIL)
    d = ext[idx] - ext[centre][:, None]
    scale = np.max(np.abs(d), axis=1)
    dt = d / scale[:, None]
    powers = np.arange(STENCIL)
    vander = dt[:, None, :] ** powers[None, :, None]
    rhs = np.zeros((len(nodes), STENCIL, 2))
    rhs[:, 1, 0] = 1.0
    rhs[:, 2, 1] = 2.0
    w = np.linalg.solve(vander, rhs)
    w1 = w[:, :, 0] / scale[:, None]
    w2 = w[:, :, 1] / scale[:, None] ** 2
    return idx, w1, w2


def _require_nodes(f: RadialProfile, count: int = STENCIL):
    if len(f.nodes) < count:
        raise DegenerateGridError(f"need at least {count} nodes, got {len(f.nodes)}")


def derivatives(f: RadialProfile) -> tuple[np.ndarray, np.ndarray]:
    """First and second radial derivatives on the nodes of ``f``."""
    _require_nodes(f)
    idx, w1, w2 = _stencil_weights(f.nodes)
    _, vext, _ = _extended(f.nodes, f.values)
    window = vext[idx]
    return np.sum(w1 * window, axis=1), np.sum(w2 * window, axis=1)


def _even_extrapolate(nodes, vals):
    """Value at r = 0 of the even quartic a + b r^2 + c r^4 through nodes 1..3."""
    r2 = nodes[1:4] ** 2
    coeffs = np.linalg.solve(np.vander(r2, 3, increasing=True), vals[1:4])
    return coeffs[0]


def _laplacian_values(nodes, d1, d2, n):
    out = np.empty_like(d2)
    pos = nodes > 0
    out[pos] = d2[pos] + (n - 1) * d1[pos] / nodes[pos]
    if not pos[0]:
        # the regular limit n f''(0), evaluated so that its truncation error
        # joins the interior error smoothly (keeps Delta^k 4th order at 0)
        out[0] = _even_extrapolate(nodes, out) if len(nodes) >= 4 else n * d2[0]
    return out


def radial_laplacian(f: RadialProfile, n: int) -> RadialProfile:
    """Delta f = f'' + (n-1)/r f' on the same nodes (n f''(0) at the origin)."""
    n = check_even_dimension(n)
    d1, d2 = derivatives(f)
    return f.with_values(_laplacian_values(f.nodes, d1, d2, n))


def radial_polyharmonic(f: RadialProfile, n: int, k: int) -> RadialProfile:
    """Delta^k f by repeated radial_laplacian.

    After every application the two nodes at each non-reflected end (the
    ones with one-sided stencils) are dropped; ``trimmed`` on the result
    records the total.
    """
    n = check_even_dimension(n)
    if k < 1:
        raise ValueError("k must be a positive integer")
    _require_nodes(f, 4 * k + 1)
    left = 0 if f.reflects else HALF
    g = f
    for _ in range(k):
        g = radial_laplacian(g, n).trim(left, HALF)
    return RadialProfile(g.nodes, g.values, trimmed=(left * k, HALF * k))


def radial_gradient_norm_sq(f: RadialProfile) -> RadialProfile:
    """|grad f|^2 = (f')^2 for a radial f."""
    d1, _ = derivatives(f)
    return f.with_values(d1 * d1)


# --- quadrature -----------------------------------------------------------


@lru_cache(maxsize=None)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def radial_breaks(a: float, b: float, scale: float = 1.0, ratio: float = 1.1, extra: Sequence[float] = ()) -> np.ndarray:
    """Panel edges on [a, b]: uniform below ``scale``, geometric above it."""
    if b <= a:
        return np.array([a, b], dtype=float)
    step = scale * (ratio - 1.0)
    pts = [a, b]
    lo = max(a, 0.0)
    if lo < scale:
        pts.extend(np.arange(0.0, min(b, scale), step))
    start = max(lo, scale)
    if b > start:
        count = int(math.ceil(math.log(b / start) / math.log(ratio)))
        pts.extend(start * ratio ** np.arange(count + 1))
    pts.extend(extra)
    pts = np.unique(np.asarray(pts, dtype=float))
    return pts[(pts >= a) & (pts <= b)]


def panel_integrals(func: Callable, breaks: np.ndarray, order: int = 16) -> np.ndarray:
    """Gauss-Legendre integral of ``func`` over each panel [breaks[i], breaks[i+1]]."""
    x, w = gauss_legendre(order)
    a, b = breaks[:-1], breaks[1:]
    half = 0.5 * (b - a)
    pts = 0.5 * (a + b)[:, None] + half[:, None] * x[None, :]
    vals = np.asarray(func(pts), dtype=float)
    return half * (vals @ w)


def adaptive_breaks(func: Callable, breaks: np.ndarray, rtol: float = 1e-12, order: int = 16, max_rounds: int = 40) -> np.ndarray:
    """Bisect panels until an order/2 rule agrees with the order rule.

    Agreement is measured against the sum of |panel| so cancelling
    integrands do not force endless refinement.
    """
    breaks = np.asarray(breaks, dtype=float)
    for _ in range(max_rounds):
        fine = panel_integrals(func, breaks, order)
        coarse = panel_integrals(func, breaks, order // 2)
        scale = max(float(np.sum(np.abs(fine))), 1e-300)
        bad = np.abs(fine - coarse) > rtol * scale
        if not np.any(bad):
            return breaks
        mids = 0.5 * (breaks[:-1] + breaks[1:])[bad]
        breaks = np.sort(np.concatenate([breaks, mids]))
    return breaks


def integrate_adaptive(func: Callable, a: float, b: float, rtol: float = 1e-12, extra: Sequence[float] = ()) -> float:
    """Vectorized adaptive Gauss-Legendre integral of ``func`` over [a, b]."""
    if b <= a:
        return 0.0
    scale = min(1.0, b)
    breaks = radial_breaks(a, b, scale=max(scale, 1e-12), ratio=1.25, extra=extra)
    breaks = adaptive_breaks(func, breaks, rtol=rtol)
    return float(np.sum(panel_integrals(func, breaks)))


def annulus_average(f: RadialProfile, n: int, r: float) -> float:
    """Volume average of a radial field over the annulus B_{2r} minus B_r."""
    n = check_even_dimension(n)
    if r <= 0:
        raise ValueError("r must be positive")
    if not f.covers(r, 2 * r):
        raise CoverageError(f"annulus [{r:g}, {2 * r:g}] not covered by the profile")
    points = ()
    if f.func is None:
        inner = f.nodes[(f.nodes > r) & (f.nodes < 2 * r)]
        if f.tail is not None and r < f.r_max < 2 * r:
            inner = np.append(inner, f.r_max)
        points = tuple(inner)
    num, _ = integrate.quad(
        lambda s: float(f(s)) * s ** (n - 1),
        r,
        2 * r,
        points=points or None,
        epsabs=0.0,
        epsrel=1e-11,
        limit=max(200, 4 * len(points) + 50),
    )
    den = (2.0**n - 1.0) * r**n / n
    return num / den


def annulus_flux_average(dfdr: Callable, n: int, r) -> np.ndarray:
    """Annulus average of Delta f from the radial derivative alone.

    By the divergence theorem the integral of Delta f over B_{2r} minus B_r
    is the boundary flux, so only f' at r and 2r is needed.
    """
    r = np.asarray(r, dtype=float)
    num = (2 * r) ** (n - 1) * dfdr(2 * r) - r ** (n - 1) * dfdr(r)
    return n * num / ((2.0**n - 1.0) * r**n)


# --- sphere cubature --------------------------------------------------------


_DEFAULT_DEGREE = {2: 63, 3: 31, 4: 24, 5: 16, 6: 14, 7: 10, 8: 8}


@lru_cache(maxsize=None)
def sphere_rule(n: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Product rule on the unit sphere in R^n, exact for polynomials of the given degree.

    The first coordinate is integrated with Gauss-Jacobi nodes for the
    weight (1 - t^2)^((n-3)/2); the rest recurses onto the sphere in R^(n-1),
    ending with an equispaced rule on the circle.  Weights sum to one.
    """
    if n < 2:
        raise InvalidDimensionError("sphere rules need n >= 2")
    if n == 2:
        m = degree + 1
        theta = 2 * np.pi * np.arange(m) / m
        pts = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        return pts, np.full(m, 1.0 / m)
    q = degree // 2 + 1
    a = (n - 3) / 2.0
    t, wt = special.roots_jacobi(q, a, a)
    wt = wt / wt.sum()
    sub_pts, sub_w = sphere_rule(n - 1, degree)
    rad = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    pts = np.concatenate(
        [np.column_stack([np.full(len(sub_w), ti), ri * sub_pts]) for ti, ri in zip(t, rad)]
    )
    w = np.concatenate([wi * sub_w for wi in wt])
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


# --- analytic and gridded fields --------------------------------------------


@dataclass(frozen=True)
class AnalyticField:
    """Closed-form field on R^n.

    ``f`` and every evaluator take points of shape (..., n).  ``laplacians``
    holds Delta f, Delta^2 f, ... in order; any prefix may be supplied.
    ``vanishes_from`` = j declares Delta^i f = 0 for every i >= j.
    """

    n: int
    f: Callable
    grad: Callable | None = None
    laplacians: tuple = ()
    vanishes_from: int | None = None

    def __post_init__(self):
        check_even_dimension(self.n)

    def __call__(self, x):
        return np.asarray(self.f(np.asarray(x, dtype=float)), dtype=float)

    @property
    def lap(self) -> Callable | None:
        return self.laplacians[0] if self.laplacians else None

    @property
    def bilap(self) -> Callable | None:
        return self.laplacians[1] if len(self.laplacians) > 1 else None

    def iterated_laplacian(self, j: int) -> Callable:
        if j == 0:
            return self.f
        if self.vanishes_from is not None and j >= self.vanishes_from:
            return lambda x: np.zeros(np.shape(x)[:-1])
        if j > len(self.laplacians):
            raise ValueError(f"Delta^{j} not supplied for this field")
        return self.laplacians[j - 1]

    def derivative_errors(self, points, h: float) -> dict[str, float]:
        """Max deviation of each supplied evaluator from a 4th-order central difference."""
        pts = np.asarray(points, dtype=float)
        eye = np.eye(self.n)
        c = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
        c2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
        offsets = np.arange(-2, 3)

        def fd_lap(fun):
            total = 0.0
            for i in range(self.n):
                vals = [fun(pts + o * h * eye[i]) for o in offsets]
                total = total + sum(ci * v for ci, v in zip(c2, vals)) / h**2
            return total

        errors = {}
        if self.grad is not None:
            g = np.asarray(self.grad(pts))
            fd = np.stack(
                [sum(ci * self.f(pts + o * h * eye[i]) for ci, o in zip(c, offsets)) / h for i in range(self.n)],
                axis=-1,
            )
            errors["grad"] = float(np.max(np.abs(g - fd)))
        prev = self.f
        for j, lapj in enumerate(self.laplacians, start=1):
            errors[f"lap{j}"] = float(np.max(np.abs(lapj(pts) - fd_lap(prev))))
            prev = lapj
        return errors

    @classmethod
    def radial_power(cls, n: int, m: int) -> "AnalyticField":
        """|x|^(2m) with every nonzero iterated Laplacian in closed form."""
        # Delta |x|^(2j) = 2j (2j + n - 2) |x|^(2j - 2)
        coef = [1.0]
        for j in range(m, 0, -1):
            coef.append(coef[-1] * 2 * j * (2 * j + n - 2))

        def power(j, c):
            return lambda x: c * np.sum(np.asarray(x) ** 2, axis=-1) ** (m - j)

        def grad(x):
            x = np.asarray(x)
            if m == 0:
                return np.zeros_like(x)
            return 2 * m * np.sum(x**2, axis=-1, keepdims=True) ** (m - 1) * x

        laps = tuple(power(j, coef[j]) for j in range(1, m + 1))
        laps = laps + (lambda x: np.zeros(np.shape(x)[:-1]),)
        return cls(n, power(0, 1.0), grad, laps, m + 1)

    @classmethod
    def linear(cls, coeffs: Sequence[float], const: float = 0.0) -> "AnalyticField":
        a = np.asarray(coeffs, dtype=float)
        zero = lambda x: np.zeros(np.shape(x)[:-1])  # noqa: E731
        return cls(
            len(a),
            lambda x: np.asarray(x) @ a + const,
            lambda x: np.broadcast_to(a, np.shape(x)).copy(),
            (zero,),
            1,
        )

    def sample_radial(self, nodes) -> RadialProfile:
        nodes = np.asarray(nodes, dtype=float)
        pts = np.zeros((len(nodes), self.n))
        pts[:, 0] = nodes
        return RadialProfile(nodes, self(pts))


def sphere_average(f, p, r: float, degree: int | None = None) -> float:
    """Mean of ``f`` over the sphere of radius r centred at p.

    ``f`` is an AnalyticField or any callable on (..., n) arrays; the
    dimension is taken from ``p``.
    """
    p = np.asarray(p, dtype=float)
    n = p.shape[-1]
    if r <= 0:
        raise ValueError("r must be positive")
    deg = degree if degree is not None else _DEFAULT_DEGREE.get(n, 6)
    pts, w = sphere_rule(n, deg)
    vals = np.asarray(f(p + r * pts), dtype=float)
    return float(vals @ w)


@dataclass(frozen=True, eq=False)
class GridField:
    """Uniform lattice samples on the box [-L, L)^n with spacing h."""

    n: int
    h: float
    L: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.n not in (2, 4):
            raise InvalidDimensionError("GridField supports n in {2, 4}")
        if self.h <= 0 or self.L <= 0:
            raise ValueError("spacing and half-width must be positive")
        per_axis = self.points_per_axis(self.h, self.L)
        if self.values.shape != (per_axis,) * self.n:
            raise ValueError(f"values must have extent {per_axis} along each of {self.n} axes")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")

    @staticmethod
    def points_per_axis(h: float, L: float) -> int:
        count = 2 * L / h
        if abs(count - round(count)) > 1e-9:
            raise ValueError("2L/h must be an integer")
        return int(round(count))

    @staticmethod
    def axis(h: float, L: float) -> np.ndarray:
        return -L + h * np.arange(GridField.points_per_axis(h, L))

    @classmethod
    def sample(cls, func: Callable, n: int, h: float, L: float) -> "GridField":
        ax = cls.axis(h, L)
        mesh = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), axis=-1)
        return cls(n, h, L, np.asarray(func(mesh), dtype=float))

    def integrate(self) -> float:
        return float(np.sum(self.values) * self.h**self.n)
