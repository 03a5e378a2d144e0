"""Exception hierarchy.

The CLI maps these onto exit codes: configuration problems -> 2,
solver failures -> 3, analysis failures -> 4.
"""


class ConfigError(ValueError):
    """Invalid scenario, file or parameter set."""


class MeshError(ConfigError):
    """Degenerate or inconsistent surface mesh."""


class SolverError(RuntimeError):
    """Base class for field-solver failures."""


class SingularSystemError(SolverError):
    """The collocation system is (numerically) singular."""


class ConvergenceError(SolverError):
    """Iterative fallback exceeded its iteration cap."""


class NearFieldError(SolverError):
    """Evaluation point violates the near-field cutoff with near-field
    quadrature disabled."""


class AnalysisError(RuntimeError):
    """Base class for data-reduction failures."""


class InsufficientSamplesError(AnalysisError):
    """Too few samples for the requested fit."""


class NonConfiningError(AnalysisError):
    """Quadratic curvature is not positive; no secular frequency exists."""


class GridMismatchError(AnalysisError):
    """Potential maps sampled on different grids cannot be combined."""
