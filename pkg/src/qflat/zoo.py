"""Reference metrics with closed-form or constructed expected values.

Every expected value carries a provenance tag:

* ``trivial``  - forced by the definitions,
* ``derived``  - closed-form or construction argument, checked numerically,
* ``paper``    - a value the underlying theory predicts directly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .conventions import QflatError, UnsupportedDimensionError, c_n, check_even_dimension
from .curvature import ConformalMetric, RadialJet
from .field import LogTail, RadialProfile, make_nodes
from .potential import QDensity, potential_jet, ring_density


@dataclass(frozen=True)
class Expected:
    value: object
    tag: str
    tol: float = 0.0


@dataclass(frozen=True, eq=False)
class ZooEntry:
    name: str
    metric: ConformalMetric
    density: QDensity | None
    expected: dict
    hypothesis_profile: dict
    params: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.metric.n

    def profile_line(self) -> str:
        return ", ".join(f"{k}:{v}" for k, v in self.hypothesis_profile.items())

    def describe(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "params": dict(self.params),
            "r_max": float(self.metric.r_max),
            "hypothesis_profile": dict(self.hypothesis_profile),
            "expected": {k: {"value": e.value, "tag": e.tag, "tol": e.tol} for k, e in self.expected.items()},
        }

    def profile_csv(self) -> str:
        return self.metric.profile.to_csv()


def _profile_from_jet(jet: RadialJet, nodes, tail: LogTail | None = None) -> RadialProfile:
    return RadialProfile(nodes, jet(nodes)[0], tail=tail, func=lambda r: jet(r)[0])


def _tail_of(jet: RadialJet, r_max: float) -> LogTail:
    u, du = (float(a) for a in jet(np.array(r_max))[:2])
    beta = du * r_max
    return LogTail(beta, u - beta * math.log(r_max), r_max)


def zoo_flat(n: int = 4, r_max: float = 1e6, count: int = 2000, r_scale: float = 1.0) -> ZooEntry:
    n = check_even_dimension(n)
    jet = RadialJet(lambda r: (np.zeros_like(r),) * 5)
    nodes = make_nodes(r_max, count, r_scale)
    metric = ConformalMetric(n, _profile_from_jet(jet, nodes, LogTail(0.0, 0.0, r_max)), "flat", jet)
    density = QDensity(RadialProfile.from_function(lambda s: np.zeros_like(np.asarray(s, dtype=float)), nodes), n, s_max=1.0)
    expected = {
        "Q": Expected(0.0, "trivial"),
        "R": Expected(0.0, "trivial"),
        "iso_ratio": Expected(1.0, "trivial", 1e-10),
        "total_q": Expected(0.0, "trivial", 1e-12),
        "deficit_residual": Expected(0.0, "trivial", 1e-6),
        "complete": Expected(True, "trivial"),
        "verdict": Expected("normal", "trivial"),
    }
    profile = {"abs_q": "satisfies", "Rminus": "satisfies", "R_sq": "satisfies", "sigma2": "satisfies", "complete": "satisfies"}
    return ZooEntry("flat", metric, density, expected, profile, {"n": n})


def sphere_jet(n: int, lam: float) -> RadialJet:
    """u = log(2 lam / (1 + lam^2 r^2)), the round unit sphere pulled back by stereographic projection."""

    def fn(r):
        t = (lam * r) ** 2
        D = 1.0 + t
        u = math.log(2 * lam) - np.log(D)
        du = -2 * lam**2 * r / D
        lap = -2 * lam**2 * (n + (n - 2) * t) / D**2
        dlap = 4 * lam**4 * r * ((n + 2) + (n - 2) * t) / D**3
        d2lap = 4 * lam**4 * ((n + 2) - (2 * n + 16) * t - (3 * n - 6) * t**2) / D**4
        return u, du, lap, dlap, d2lap

    return RadialJet(fn)


def zoo_sphere(n: int = 4, lam: float = 1.0, r_max: float = 100.0, count: int = 2000, r_scale: float = 1.0) -> ZooEntry:
    n = check_even_dimension(n)
    if n not in (2, 4):
        raise UnsupportedDimensionError("sphere entries exist for n in {2, 4}")
    if not lam > 0:
        raise QflatError("lambda must be positive")
    jet = sphere_jet(n, lam)
    nodes = make_nodes(r_max, count, r_scale)
    metric = ConformalMetric(n, _profile_from_jet(jet, nodes, _tail_of(jet, r_max)), f"sphere(lambda={lam:g})", jet)
    q_value = 3.0 if n == 4 else 0.5

    def P(s):
        return q_value * (2 * lam / (1 + (lam * np.asarray(s, dtype=float)) ** 2)) ** n

    density = QDensity(RadialProfile.from_function(P, nodes), n, (1.0 / lam,), s_max=1e4 / lam)
    expected = {
        "R": Expected(float(n * (n - 1)), "derived", 1e-8),
        "Q": Expected(q_value, "derived", 1e-6),
        "total_q": Expected(2.0, "derived", 1e-4),
        "complete": Expected(False, "derived"),
        "verdict": Expected("normal", "derived"),
        "flux": Expected(0.0, "trivial", 1e-9),
    }
    if n == 4:
        expected["sigma2"] = Expected(1.5, "derived", 1e-8)
        expected["sigma2_over"] = Expected(2.0, "derived", 1e-4)
    profile = {"abs_q": "satisfies", "Rminus": "satisfies", "R_sq": "satisfies", "sigma2": "violates", "complete": "violates"}
    return ZooEntry("sphere", metric, density, expected, profile, {"n": n, "lambda": lam})


def zoo_cone(n: int = 4, alpha: float = 0.5, width: float = 0.1, r_max: float = 1e6, count: int = 2000, r_scale: float = 1.0) -> ZooEntry:
    """Potential of a Gaussian ring of total Q-mass alpha c_n; an asymptotic cone of angle 1 - alpha."""
    n = check_even_dimension(n)
    if n not in (2, 4):
        raise UnsupportedDimensionError("potential-built entries exist for n in {2, 4}")
    if not 0 < alpha < 1:
        raise QflatError("alpha must lie in (0, 1)")
    if alpha >= 0.95:
        warnings.warn(f"alpha = {alpha} is close to 1; the end is nearly a cylinder", stacklevel=2)
    density = ring_density(n, alpha * c_n(n), 1.0, width)
    jet = potential_jet(density)
    nodes = make_nodes(r_max, count, r_scale)
    metric = ConformalMetric(n, _profile_from_jet(jet, nodes, _tail_of(jet, r_max)), f"cone(alpha={alpha:g})", jet, density.breakpoints)
    expected = {
        "total_q": Expected(alpha, "derived", 1e-6),
        "iso_limit": Expected(1 - alpha, "paper", 0.02),
        "verdict": Expected("normal", "trivial"),
        "h_spread": Expected(0.0, "trivial", 1e-8),
        "Rminus_tail": Expected(0.0, "derived"),
        "complete": Expected(True, "derived"),
    }
    profile = {"abs_q": "satisfies", "Rminus": "satisfies", "R_sq": "violates", "sigma2": "satisfies", "complete": "satisfies"}
    return ZooEntry("cone", metric, density, expected, profile, {"n": n, "alpha": alpha, "width": width})


def zoo_nonnormal(n: int = 4, alpha: float = 0.5, width: float = 0.1, r_max: float = 10.0, count: int = 2000, r_scale: float = 1.0) -> ZooEntry:
    """u = v + r^2 with v the cone potential; Q e^{4u} is unchanged since Delta^2 r^2 = 0."""
    if n != 4:
        raise UnsupportedDimensionError("the non-normal entry is defined for n = 4")
    if not 0 < alpha < 1:
        raise QflatError("alpha must lie in (0, 1)")
    density = ring_density(n, alpha * c_n(n), 1.0, width)
    base = potential_jet(density)

    def fn(r):
        v, dv, lap, dlap, d2lap = base(r)
        return v + r * r, dv + 2 * r, lap + 2 * n, dlap, d2lap

    jet = RadialJet(fn)
    nodes = make_nodes(r_max, count, r_scale)
    metric = ConformalMetric(n, _profile_from_jet(jet, nodes), f"nonnormal(alpha={alpha:g})", jet, density.breakpoints)
    expected = {
        "verdict": Expected("non-normal", "trivial"),
        "lap_h_avg": Expected(float(2 * n), "trivial", 1e-6),
        "total_Rminus_pow": Expected("diverges-numerically", "derived"),
    }
    profile = {"abs_q": "satisfies", "Rminus": "violates", "R_sq": "violates", "sigma2": "violates", "complete": "satisfies"}
    return ZooEntry("nonnormal", metric, density, expected, profile, {"n": n, "alpha": alpha, "width": width})


REGISTRY = {
    "flat": zoo_flat,
    "sphere": zoo_sphere,
    "cone": zoo_cone,
    "nonnormal": zoo_nonnormal,
}


def list_entries() -> list[str]:
    return list(REGISTRY)


def get_entry(name: str, **params) -> ZooEntry:
    try:
        builder = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown zoo entry {name!r}; choose from {', '.join(REGISTRY)}") from None
    return builder(**params)
