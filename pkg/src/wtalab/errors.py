"""Exception types shared across the package."""


class WtalabError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(WtalabError, ValueError):
    """A config value or combination of values is invalid."""


class InputError(WtalabError, ValueError):
    """A function argument violates its contract (shape, range, length)."""


class DatasetParseError(InputError):
    """A dataset file could not be parsed.

    Carries the 1-based line number of the offending record.
    """

    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class NonFiniteError(WtalabError, ArithmeticError):
    """A loss or gradient came out NaN or infinite."""
