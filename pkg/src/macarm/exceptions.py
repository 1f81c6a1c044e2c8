"""Exception hierarchy shared across the package."""


class MACError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(MACError, ValueError):
    pass


class EmptyMaskError(InvalidArgumentError):
    pass


class CapacityError(MACError):
    """Raised when an exact computation would exceed the enumeration cutoff."""


class DegenerateDistributionError(MACError, ValueError):
    pass


class ZeroEvidenceError(MACError, ValueError):
    """The conditioning event has probability zero under the model."""


class ValidationError(MACError, ValueError):
    pass


class ParseError(MACError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
