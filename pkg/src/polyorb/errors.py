"""Exception types shared across the package."""


class PolyorbError(Exception):
    """Base class for all package-specific failures."""


class CollisionError(PolyorbError):
    """A denominator of the vector field dropped below the guard threshold.

    ``element`` is the index of the offending rotation element within the
    group's non-identity elements, or ``None`` when the nucleus term (or a
    particle pair, for the full system) triggered the guard.
    """

    def __init__(self, message, element=None, pair=None, time=None):
        super().__init__(message)
        self.element = element
        self.pair = pair
        self.time = time


class IntegrationError(PolyorbError):
    """The ODE integrator failed (step-size underflow or solver breakdown)."""


class ConvergenceError(PolyorbError):
    """An iterative solve exhausted its iteration budget."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SingularSystemError(PolyorbError):
    """A linear system lost rank beyond what least squares can absorb."""


class HomotopySafetyError(PolyorbError):
    """A curve or orbit came too close to the collision axis set."""


class ConfigError(PolyorbError):
    """Invalid or unreadable run configuration."""


class PipelineError(PolyorbError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage, message, cause=None):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.cause = cause
