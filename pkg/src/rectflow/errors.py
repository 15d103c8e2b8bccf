"""Exception hierarchy. Every error raised deliberately by rectflow derives
from :class:`RectflowError`, so the CLI can report it without a traceback."""


class RectflowError(Exception):
    pass


class DimensionError(RectflowError, ValueError):
    pass


class ConfigError(RectflowError, ValueError):
    pass


class DomainError(RectflowError, ValueError):
    pass


class SchemaError(RectflowError, ValueError):
    pass


class ParseError(RectflowError, ValueError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class EmptyInputError(RectflowError, ValueError):
    pass


class FitError(RectflowError, ValueError):
    pass


class EncodeError(RectflowError, ValueError):
    pass


class DecodeError(RectflowError, ValueError):
    pass


class DivergenceError(RectflowError, ArithmeticError):
    def __init__(self, message: str, iteration: int | None = None, row: int | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.row = row


class StiffnessError(RectflowError, RuntimeError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class FormatError(RectflowError, ValueError):
    pass


class CorruptFileError(RectflowError, ValueError):
    pass


class MetricError(RectflowError, ValueError):
    pass
