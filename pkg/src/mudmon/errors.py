"""Exception types shared across the package."""


class MudmonError(Exception):
    """Base class for all package errors."""


class ParseError(MudmonError):
    """Input could not be parsed (malformed JSON, bad CSV)."""


class SchemaError(MudmonError):
    """Input parsed but violates the expected schema or an invariant."""


class FormatError(MudmonError):
    """Counter CSV row is malformed or out of order; carries a line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NoDeviceError(MudmonError):
    """Packet references no registered device."""


class TableFullError(MudmonError):
    """Reactive entry capacity exhausted for a device table."""


class OrderError(MudmonError):
    """Timestamps arrived out of order."""


class EmptyError(MudmonError):
    """An operation requiring at least one observation got none."""


class InsufficientDataError(MudmonError):
    """Fewer training rows than the configured minimum."""


class DegenerateDataError(MudmonError):
    """Training data carries no usable variation (all rows identical)."""


class LayoutMismatchError(MudmonError):
    """Vector length does not match the layout the model was trained on."""


class MissingScopeError(MudmonError):
    """A registered scope has no feature vector for the current minute."""
