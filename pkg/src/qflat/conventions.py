"""Normalization constants shared by every module.

One convention is used for all even n:

    (-Delta)^{n/2} u = 2 Q e^{n u}
    (-Delta)^{n/2} log(1/|x|) = 2 c_n delta_0
    c_n = 2^{n-2} ((n-2)/2)! pi^{n/2}

With it the round sphere has (1/c_n) int Q dv = 2 and the logarithmic
potential (1/c_n) int log(|y|/|x-y|) P(y) dy solves (-Delta)^{n/2} v = 2 P.
At n = 2 this makes Q = K/2 (half the Gauss curvature).
"""

from __future__ import annotations

import math


class QflatError(ValueError):
    """Base class for domain errors raised by the package."""


class InvalidDimensionError(QflatError):
    pass


class UnsupportedDimensionError(QflatError):
    pass


class DegenerateGridError(QflatError):
    pass


class CoverageError(QflatError):
    pass


class NodeMismatchError(QflatError):
    pass


def check_even_dimension(n: int) -> int:
    if int(n) != n or n < 2 or n % 2:
        raise InvalidDimensionError(f"dimension must be an even integer >= 2, got {n!r}")
    return int(n)


def c_n(n: int) -> float:
    """Total Q-curvature of the unit n-hemisphere; c_4 = 4 pi^2."""
    n = check_even_dimension(n)
    return 2.0 ** (n - 2) * math.factorial((n - 2) // 2) * math.pi ** (n / 2)


def omega_n(n: int) -> float:
    """Volume of the unit ball in R^n."""
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def sphere_area(n: int) -> float:
    """Area n * omega_n of the unit sphere in R^n."""
    return n * omega_n(n)


def conventions_block(n: int) -> dict:
    """Echo of the normalization, embedded in every JSON report."""
    return {
        "n": int(n),
        "c_n": c_n(n),
        "c_n_formula": "2^(n-2) * ((n-2)/2)! * pi^(n/2)",
        "curvature_equation": "(-Delta)^(n/2) u = 2 Q e^(n u)",
        "fundamental_solution": "(-Delta)^(n/2) log(1/|x|) = 2 c_n delta_0",
        "q_density": "P = Q e^(n u)",
        "scalar_curvature": "R = -2(n-1) e^(-2u) (Delta u + (n-2)/2 |grad u|^2)",
    }
