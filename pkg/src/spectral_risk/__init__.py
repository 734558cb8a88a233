"""Asymptotic risk of ridge-penalized maximum likelihood in the proportional regime."""

from .errors import (
    ConfigError,
    IllConditioned,
    IndexOutOfRange,
    InvalidRegime,
    NoAdmissibleRoot,
    NoConvergence,
    NotConverged,
    NotPositiveDefinite,
    NotSymmetric,
    NumericalError,
    PoleInDomain,
    SingularSystem,
    SpectralRiskError,
    ValidationError,
)
from .spectral import (
    AsymptoticRegime,
    Dirac,
    Empirical,
    RiskBoundInputs,
    Semicircle,
    SpectralMeasure,
    Uniform,
    h0_transform,
    limit_h_at_zero,
    risk_bound,
    solve_h,
    variance_bound,
)

__version__ = "0.1.0"
