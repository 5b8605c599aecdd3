"""Markov-modulated Ornstein-Uhlenbeck processes: moments, transforms and simulation."""

from ._core import (
    NumericalError,
    Spec,
    ValidationError,
    __version__,
    absorbing_transform,
    canonical_config,
    covariance_lag,
    deviation_matrix,
    limit_variance,
    moments,
    pd_asymptotic_variance,
    resolvent_deviation,
    scale_spec,
    simulate_terminal,
    stationary_distribution,
    stationary_moments,
)

__all__ = [
    "NumericalError",
    "Spec",
    "ValidationError",
    "__version__",
    "absorbing_transform",
    "canonical_config",
    "covariance_lag",
    "deviation_matrix",
    "limit_variance",
    "moments",
    "pd_asymptotic_variance",
    "resolvent_deviation",
    "scale_spec",
    "simulate_terminal",
    "stationary_distribution",
    "stationary_moments",
]
