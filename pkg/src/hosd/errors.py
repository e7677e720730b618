"""Exception types raised by the hosd package."""


class HosdError(Exception):
    """Base class for package errors."""


class InvalidInputError(HosdError, ValueError):
    """Input data or parameters violate a documented precondition."""


class UndefinedStatisticError(HosdError, ArithmeticError):
    """A statistic is undefined for the given data (e.g. zero variance)."""
