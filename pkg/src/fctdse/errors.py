"""Exception hierarchy shared by every module.

The CLI maps :class:`ValidationError` subclasses to exit status 1 and
:class:`IntegrationError` to exit status 2.
"""


class FctDseError(Exception):
    """Base class for all package errors."""


class ValidationError(FctDseError):
    """Input failed a structural or semantic check."""


class StructuralError(ValidationError, ValueError):
    """Dimension mismatch, non-square input, non-finite entries."""


class NotJointlyObservableError(ValidationError):
    def __init__(self, message, deficit=0):
        super().__init__(message)
        self.deficit = deficit


class ConfigurationError(ValidationError):
    """Scenario, schedule, gain or exponent out of range."""


class ProtocolError(ValidationError):
    """An agent is missing an upstream estimate it needs."""


class WalkSearchError(ValidationError):
    """Graph too large for exhaustive walk search."""


class IntegrationError(FctDseError):
    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t
