"""Exception hierarchy shared across the toolkit."""


class ForecastError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(ForecastError, ValueError):
    pass


class GapError(ForecastError, ValueError):
    """Timestamps are missing, duplicated or not on a 1-hour grid."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class ParseError(ForecastError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class SchemaError(ForecastError, ValueError):
    pass


class InsufficientDataError(ForecastError, ValueError):
    pass


class SplitOrderError(ForecastError, ValueError):
    pass


class ConfigError(ForecastError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SingularSystemError(ForecastError, ArithmeticError):
    pass


class DivergenceError(ForecastError, RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ChecksumError(ForecastError, IOError):
    pass


class ZeroDenominatorError(ForecastError, ZeroDivisionError):
    pass


class AlignmentError(ForecastError, ValueError):
    pass


class NoDataError(ForecastError, ValueError):
    pass
