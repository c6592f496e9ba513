"""Exception hierarchy shared by all modules."""


class BlowupLabError(Exception):
    """Base class for errors raised by this package."""


class DomainError(BlowupLabError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class UsageError(BlowupLabError, ValueError):
    """An operation was called in a mode or state it does not support."""


class ConfigError(BlowupLabError, ValueError):
    """A model or sweep configuration violates a data hypothesis or is malformed."""


class ConvergenceError(BlowupLabError, RuntimeError):
    """A numerical procedure failed to reach its tolerance.

    The last available estimate is attached as ``estimate`` (and the
    self-reported error as ``error``) so callers may still inspect it.
    """

    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class OutputError(BlowupLabError, OSError):
    """Writing an output file failed; the message names the path."""
