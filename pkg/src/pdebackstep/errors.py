"""Exception types shared across the toolkit.

The hierarchy separates problems with the input data (configuration,
model structure, failed standing assumptions) from numerical failures
encountered while solving (non-convergent iterations, resonant or
ill-posed subproblems).
"""

__all__ = [
    "ToolkitError",
    "ConfigurationError",
    "StructuralError",
    "AssumptionError",
    "SolvabilityError",
    "ResonanceError",
    "ConvergenceError",
    "SimulationError",
]


class ToolkitError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(ToolkitError):
    """A configuration file or option set is malformed or inconsistent."""


class StructuralError(ToolkitError):
    """The plant violates a structural requirement (dimensions, diagonal
    coefficient shape, strict ordering of the diffusion coefficients)."""


class AssumptionError(ToolkitError):
    """A standing assumption fails (controllability, observability or an
    invertibility condition), so the requested design cannot proceed."""


class SolvabilityError(ToolkitError):
    """A linear subproblem has no (unique) solution, typically because two
    spectra that must be disjoint overlap."""

    def __init__(self, message, offending_value=None):
        super().__init__(message)
        self.offending_value = offending_value


class ResonanceError(SolvabilityError):
    """A boundary value subproblem is resonant: the scalarized problem is
    singular at one of the eigenvalues driving it."""


class ConvergenceError(ToolkitError):
    """An iterative solver did not reach its tolerance within the allowed
    number of iterations."""

    def __init__(self, message, iterations=None, last_change=None):
        super().__init__(message)
        self.iterations = iterations
        self.last_change = last_change


class SimulationError(ToolkitError):
    """Closed-loop simulation could not be carried out as requested."""
