"""
Exception hierarchy for the perturb package.

InputError subclasses signal a problem with what the caller supplied (exit code 1
from the CLI). NumericalError subclasses signal that the numerics failed on valid
input (exit code 2).
"""
from typing import Any, Optional


class PerturbError(Exception):
    """Root of every error raised by this package."""


class InputError(PerturbError, ValueError):
    pass


class NumericalError(PerturbError, ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------

class ExprError(InputError):
    pass


class ExpressionSyntaxError(ExprError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} at position {position}")


class UnknownIdentifier(ExprError):
    def __init__(self, name: str, position: int):
        self.name = name
        self.position = position
        super().__init__(f"Unknown identifier '{name}' at position {position}")


class NonConstantExponent(ExprError):
    def __init__(self, position: int):
        self.position = position
        super().__init__(f"Exponent must be a constant expression at position {position}")


class MissingBinding(ExprError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"No value bound for variable '{name}'")


class NumericDomainError(NumericalError):
    pass


# ---------------------------------------------------------------------------
# Grids and grid functions
# ---------------------------------------------------------------------------

class InvalidDomain(InputError):
    pass


class UnsupportedDimension(InputError):
    pass


class GridMismatch(InputError):
    pass


class EmptyFunction(InputError):
    pass


class NonFiniteValues(NumericalError):
    pass


# ---------------------------------------------------------------------------
# Problems and operators
# ---------------------------------------------------------------------------

class KernelUsesU(InputError):
    pass


class InvalidProblem(InputError):
    pass


class MissingHammerstein(InputError):
    pass


class SingularMatrix(NumericalError):
    pass


class SingularJacobian(SingularMatrix):
    pass


class DerivativeMismatch(NumericalError):
    pass


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------

class SolverError(NumericalError):
    """Solver failure. `report` holds the partial report at the point of failure."""

    def __init__(self, message: str, report: Optional[Any] = None):
        self.report = report
        super().__init__(message)


class DivergenceError(SolverError):
    pass


class MaxIterExceeded(SolverError):
    pass


class ContinuationError(SolverError):
    def __init__(self, message: str, parameter: float, report: Optional[Any] = None):
        self.parameter = parameter
        super().__init__(f"{message} (t={parameter!r})", report=report)


class NotContractiveWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# Problem files and the CLI
# ---------------------------------------------------------------------------

class ProblemFileError(InputError):
    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        prefix = f"{field}: " if field else ""
        super().__init__(f"{prefix}{message}")


class UnknownExample(InputError):
    pass
