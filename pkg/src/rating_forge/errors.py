"""Exception hierarchy; the CLI maps ValidationError to exit 2 and InternalError to exit 3."""


class ValidationError(ValueError):
    """Input rejected before any computation."""


class PreconditionError(ValidationError):
    """Inputs are well formed but violate an operation's precondition."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class MonotonicityError(ValidationError):
    """A schedule that must be weakly increasing is not."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class InternalError(RuntimeError):
    """An internal consistency assertion failed."""


class NonMonotoneWarning(UserWarning):
    """Signaled qualities from an arbitrary garbling are not monotone."""
