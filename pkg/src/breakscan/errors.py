"""Exception hierarchy shared by every breakscan module."""

from __future__ import annotations


class BreakscanError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(BreakscanError, ValueError):
    pass


class SingularMatrix(BreakscanError, ArithmeticError):
    """A matrix whose condition estimate exceeds the singularity threshold."""

    def __init__(self, message: str, condition: float | None = None) -> None:
        super().__init__(message)
        self.condition = condition


class SingularBlock(SingularMatrix):
    pass


class SingularDesign(SingularMatrix):
    pass


class SingularMoment(SingularMatrix):
    pass


class SingularQ(SingularMatrix):
    pass


class InvalidCovariance(BreakscanError, ValueError):
    pass


class RegimeTooSmall(BreakscanError, ValueError):
    pass


class DegenerateDenominator(BreakscanError, ArithmeticError):
    pass


class EmptyGrid(BreakscanError, ValueError):
    pass


class ScanFailed(BreakscanError):
    pass


class TaintedResult(BreakscanError):
    """Raised when more than 2% of Monte Carlo replicates failed."""

    def __init__(self, message: str, result: object = None) -> None:
        super().__init__(message)
        self.result = result


class SchemaMismatch(BreakscanError, ValueError):
    pass


class ParseError(BreakscanError, ValueError):
    def __init__(self, message: str, line: int | None = None) -> None:
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
