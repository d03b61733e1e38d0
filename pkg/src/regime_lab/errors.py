"""Exception hierarchy.

Two families: :class:`ValidationError` for inputs or models that violate a
structural requirement (CLI exit code 2) and :class:`NumericalError` for
computations that could not be carried out (CLI exit code 3).
"""


class RegimeLabError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(RegimeLabError, ValueError):
    pass


class NumericalError(RegimeLabError, ArithmeticError):
    pass


# modulating chain
class NegativeOffDiagonal(ValidationError):
    def __init__(self, i, j, value):
        self.index = (i, j)
        super().__init__(
            f"off-diagonal entry ({i + 1},{j + 1}) = {value!r} is negative"
        )


class RowSumNonzero(ValidationError):
    def __init__(self, i, value):
        self.index = i
        super().__init__(f"row {i + 1} sums to {value!r}, expected 0")


class Reducible(ValidationError):
    def __init__(self, i, j):
        self.index = (i, j)
        super().__init__(f"state {i + 1} cannot reach state {j + 1}")


class SingularSolve(NumericalError):
    pass


# models
class NonpositiveRate(ValidationError):
    pass


class SubstochasticViolation(ValidationError):
    pass


class SplitMismatch(ValidationError):
    pass


class MissingDerivatives(ValidationError):
    pass


class NoEquilibrium(NumericalError):
    pass


class NonUniqueEquilibrium(NumericalError):
    pass


# lyapunov
class NoNegativeDrift(NumericalError):
    def __init__(self, msg, certificate=None):
        self.certificate = certificate
        super().__init__(msg)


class EmptyLattice(ValidationError):
    pass


# diffusion
class IndefiniteCovariance(NumericalError):
    pass


class LimitNotConverged(NumericalError):
    pass


class NonlinearDrift(NumericalError):
    pass


class UnstableDrift(NumericalError):
    pass


class NumericalBlowup(NumericalError):
    pass


# simulation
class ZeroTotalRate(NumericalError):
    pass


class EventBudgetExceeded(NumericalError):
    pass


class DegenerateRegression(NumericalError):
    pass
