"""Exception hierarchy shared by all modules."""


class RoughFlowError(Exception):
    """Base class for every error raised by the package."""


class UsageError(RoughFlowError, ValueError):
    """Invalid arguments or mismatched inputs."""


class DomainError(RoughFlowError, ValueError):
    """A field was evaluated outside its domain of validity."""


class ResourceError(RoughFlowError, RuntimeError):
    """A construction would exceed a configured size cap."""


class StepError(RoughFlowError, ArithmeticError):
    """A time step failed (non-convergent solve or degenerate Jacobian).

    ``step`` is the index of the failing interval when known and
    ``residual`` the last fixed-point residual.
    """

    def __init__(self, message, step=None, residual=None):
        super().__init__(message)
        self.step = step
        self.residual = residual


class ContractionError(StepError):
    """The implicit step is not a contraction for the requested step size."""

    def __init__(self, message, required_h=None, step=None):
        super().__init__(message, step=step)
        self.required_h = required_h


class ConfigError(RoughFlowError, ValueError):
    """Experiment configuration could not be parsed or resolved."""
