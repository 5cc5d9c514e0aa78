"""Exception hierarchy.

``ValidationError`` subclasses signal bad input (CLI exit code 1);
``NumericalError`` subclasses signal a numerical failure (exit code 2).
"""


class PrecisError(Exception):
    pass


class ValidationError(PrecisError, ValueError):
    pass


class NumericalError(PrecisError, ArithmeticError):
    pass


class ZeroVarianceColumn(ValidationError):
    def __init__(self, column):
        super().__init__(f"column {column} has zero empirical variance")
        self.column = column


class NotSymmetric(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class ProvenanceMismatch(ValidationError):
    pass


class InvalidAlpha(ValidationError):
    pass


class MissingColumn(ValidationError):
    pass


class TooLargeForExhaustive(ValidationError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class NonPositiveDefiniteInput(NotPositiveDefinite):
    pass


class NonPositiveDiagonal(NumericalError):
    pass


class SingularCovariance(NumericalError):
    pass


class SingularSubBlock(NumericalError):
    pass


class DegenerateResidual(NumericalError):
    pass


class NotConverged(NumericalError):
    """Raised only on request; solvers normally return a flagged iterate."""


class MaxIterationsExceeded(NotConverged):
    pass


class AllFitsFailed(NumericalError):
    pass


class TooManyFailures(NumericalError):
    pass
