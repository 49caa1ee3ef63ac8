"""Exception types shared across the ferryplan package."""


class FerryPlanError(Exception):
    """Base class for all ferryplan errors."""


class ParseError(FerryPlanError):
    """Malformed input data; carries the offending 1-based line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class BoundsError(ParseError):
    """A value violated its physical sanity bound; names the field."""

    def __init__(self, message, field, line=None):
        super().__init__(message, line=line)
        self.field = field


class InsufficientDataError(FerryPlanError):
    """Too few samples for the requested fit."""


class RankDeficientError(FerryPlanError):
    """Regressor matrix does not have full column rank; carries the rank."""

    def __init__(self, message, rank):
        super().__init__(message)
        self.rank = rank


class CorridorError(FerryPlanError):
    """Invalid corridor geometry; carries the offending vertex index if known."""

    def __init__(self, message, vertex=None):
        super().__init__(message)
        self.vertex = vertex


class SaturationError(FerryPlanError):
    """Actuator demand exceeds the feasible envelope.

    `scale` is the factor (< 1) that would bring the demand back onto
    the limit.
    """

    def __init__(self, message, scale):
        super().__init__(message)
        self.scale = scale


class IntegrationError(FerryPlanError):
    """Integrator produced a non-finite state."""


class BuildError(FerryPlanError):
    """Planning problem cannot be constructed from the given data."""


class ExtractionError(FerryPlanError):
    """Solution vector cannot be unpacked into a trajectory plan."""


class HorizonExpiredError(FerryPlanError):
    """Requested replan time is at or beyond the fixed arrival time."""


class SolverInputError(FerryPlanError):
    """Solver received inconsistent dimensions or non-finite data."""


class PlanFailedError(FerryPlanError):
    """A plan/replan did not produce a usable trajectory; carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SessionComplete(FerryPlanError):
    """Signal: the session reached its scheduled arrival time."""
