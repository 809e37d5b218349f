"""Synthesis and verification toolkit for boundary output-feedback control
of coupled parabolic systems with dynamics at both boundaries.

The package solves the kernel equations of the backstepping transformations,
assembles stabilizing state-feedback and observer gains, and verifies the
resulting closed loop by simulation and spectral analysis.
"""

from .errors import (
    AssumptionError,
    ConfigurationError,
    ConvergenceError,
    ResonanceError,
    SimulationError,
    SolvabilityError,
    StructuralError,
    ToolkitError,
)
from .fields import (
    MatrixField,
    TriangularKernel,
    composite_weights,
    kernel_compose,
    parse_expression,
    uniform_grid,
    volterra_lower_apply,
    volterra_upper_apply,
)

__version__ = "0.1.0"

__all__ = [
    "AssumptionError",
    "ConfigurationError",
    "ConvergenceError",
    "ResonanceError",
    "SimulationError",
    "SolvabilityError",
    "StructuralError",
    "ToolkitError",
    "MatrixField",
    "TriangularKernel",
    "composite_weights",
    "kernel_compose",
    "parse_expression",
    "uniform_grid",
    "volterra_lower_apply",
    "volterra_upper_apply",
    "__version__",
]
