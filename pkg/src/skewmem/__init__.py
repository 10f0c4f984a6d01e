"""Distorted Brownian motion with skew reflection on spherical membranes.

Modules: :mod:`weights` (membranes, densities, hypothesis checks),
:mod:`radial` (skew coefficients, radial model, scale function),
:mod:`simulate` (path simulation, local times), :mod:`verify`
(statistical tests), :mod:`analysis` (quadrature identity checks) and
:mod:`cli`.
"""

__version__ = "0.1.0"

from .errors import (
    BandwidthError,
    ConfigError,
    EvaluationError,
    HypothesisViolation,
    SkewMemError,
    StepSizeError,
    UsageError,
    ValidationError,
)
from .radial import SkewTable, exit_probability, radial_model, scale_function, skew_coefficients
from .simulate import SimConfig, simulate_full, simulate_radial
from .weights import WeightField, build_membranes, make_density

__all__ = [
    "BandwidthError",
    "ConfigError",
    "EvaluationError",
    "HypothesisViolation",
    "SkewMemError",
    "StepSizeError",
    "UsageError",
    "ValidationError",
    "SkewTable",
    "exit_probability",
    "radial_model",
    "scale_function",
    "skew_coefficients",
    "SimConfig",
    "simulate_full",
    "simulate_radial",
    "WeightField",
    "build_membranes",
    "make_density",
]
