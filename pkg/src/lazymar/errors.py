"""Exception types raised across the package."""


class LazyMarError(Exception):
    """Base class for every error raised by lazymar."""


class ShapeError(LazyMarError, ValueError):
    pass


class NonFiniteError(LazyMarError, FloatingPointError):
    pass


class DegenerateVectorError(LazyMarError, ValueError):
    """Raised by cosine similarity when an input has zero norm."""


class ConfigError(LazyMarError, ValueError):
    """Invalid configuration value; the message names the offending field."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ContractError(LazyMarError, ValueError):
    """A documented precondition was violated by the caller."""


class CacheError(LazyMarError, RuntimeError):
    """A cache was read before it was populated."""


class ScheduleError(LazyMarError, ValueError):
    pass


class FormatError(LazyMarError, ValueError):
    """A binary file failed validation. ``offset`` is the byte position."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class TraceParseError(LazyMarError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UndefinedCorrelationError(LazyMarError, ValueError):
    pass
