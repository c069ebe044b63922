"""Exception hierarchy shared by every module."""


class CallQAError(Exception):
    """Base class for all package errors."""


class InvalidInputError(CallQAError, ValueError):
    pass


class InvalidTimelineError(CallQAError, ValueError):
    pass


class ParseError(CallQAError, ValueError):
    """Malformed interchange file. ``row`` is the 1-based line number, if known."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class FitError(CallQAError, ValueError):
    pass


class DimensionError(CallQAError, ValueError):
    pass


class TrainingDivergedError(CallQAError, ArithmeticError):
    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(message)


class ConfigError(CallQAError, ValueError):
    pass


class DataError(CallQAError, ValueError):
    pass
