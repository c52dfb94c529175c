"""Partial matrix completion with confidence matrices."""

from .core import (
    ConfigurationError,
    DomainError,
    FactorizedMatrix,
    IndexSpace,
    MatrixClassSpec,
    VersionSpaceSpec,
    bregman_project_simplex,
    empirical_loss,
    matrix_exp,
    matrix_log,
    matrix_relative_entropy,
    max_norm_upper,
    scale_to_class,
    trace_norm,
    version_space_contains,
    weighted_loss,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DomainError",
    "FactorizedMatrix",
    "IndexSpace",
    "MatrixClassSpec",
    "VersionSpaceSpec",
    "bregman_project_simplex",
    "empirical_loss",
    "matrix_exp",
    "matrix_log",
    "matrix_relative_entropy",
    "max_norm_upper",
    "scale_to_class",
    "trace_norm",
    "version_space_contains",
    "weighted_loss",
]
