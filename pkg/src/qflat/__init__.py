"""Numerical diagnostics for Q-curvature on radial conformally flat metrics."""

from .conventions import (
    CoverageError,
    DegenerateGridError,
    InvalidDimensionError,
    NodeMismatchError,
    QflatError,
    UnsupportedDimensionError,
    c_n,
    omega_n,
)
from .curvature import ConformalMetric, CurvatureReport, RadialJet, curvature_report, q_curvature, scalar_curvature
from .field import AnalyticField, GridField, LogTail, RadialProfile, make_nodes
from .geometry import (
    DeficitReport,
    GeometrySeries,
    HypothesisReport,
    annulus_scalar_bound,
    deficit_check,
    divergence_flux,
    geometry_series,
    hypothesis_report,
    total_q,
)
from .potential import (
    NormalityReport,
    PizzettiCoefficients,
    QDensity,
    annulus_decay_series,
    log_potential,
    log_potential_gradient,
    normality_residual,
    pizzetti_coefficients,
    spherical_mean_expansion_check,
)
from .zoo import ZooEntry, get_entry, list_entries, zoo_cone, zoo_flat, zoo_nonnormal, zoo_sphere

__version__ = "0.1.0"
