"""Exception hierarchy shared across the package."""


class FlccError(Exception):
    """Base class for all errors raised by flcc."""


class InvalidParameterError(FlccError, ValueError):
    pass


class InvalidLayoutError(FlccError):
    pass


class InvalidInputError(FlccError, ValueError):
    pass


class NumericalDivergenceError(FlccError, ArithmeticError):
    pass


class NoParticipantsError(FlccError):
    pass


class FormatError(FlccError):
    """Malformed IDX or checkpoint file."""


class InsufficientDataError(FlccError):
    pass


class ConfigError(FlccError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.key = key
        self.line = line
