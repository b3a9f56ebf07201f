"""Exception types shared across the package."""


class InclearnError(Exception):
    """Base class for all package errors."""


class ShapeError(InclearnError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(InclearnError, ValueError):
    """A documented precondition was violated by the caller."""


class NumericError(InclearnError, ArithmeticError):
    """Non-finite values were encountered where finite ones are required."""


class TrainingDivergence(InclearnError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class FormatError(InclearnError, ValueError):
    """An on-disk file does not follow the expected layout."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class DataGenerationError(InclearnError, RuntimeError):
    """A synthetic dataset could not be generated with the requested constraints."""
