"""Exception hierarchy shared across the package."""


class OptomechError(Exception):
    """Base class for all errors raised by optombqc."""


class DimensionError(OptomechError, ValueError):
    """Operator/state dimensions do not match the Hilbert space."""


class DomainError(OptomechError, ValueError):
    """A parameter lies outside its mathematical domain."""


class TruncationError(OptomechError):
    """The Fock cutoff is too small for the requested state.

    ``loss`` carries the discarded norm (or probability weight).
    """

    def __init__(self, message, loss=None):
        super().__init__(message)
        self.loss = loss


class ResourceError(OptomechError):
    """Requested Hilbert space exceeds the configured memory budget."""


class StabilityError(OptomechError, ValueError):
    """Drive configuration yields unstable linear dynamics."""


class NumericalError(OptomechError):
    """Iteration or integration failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class RareOutcomeError(OptomechError):
    """Measurement outcome has vanishing probability density."""


class GridError(OptomechError):
    """A sampling grid does not cover the distribution's support."""


class UnsupportedOperationError(OptomechError):
    """Operation is deliberately not implemented for these arguments."""


class ConfigError(OptomechError):
    """Experiment configuration failed validation."""

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems or [])
