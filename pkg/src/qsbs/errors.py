"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class QsbsError(Exception):
    """Base class for all package errors."""

    #: Short machine-readable code, surfaced by the CLI error object.
    code = "qsbs_error"


class ParameterError(QsbsError, ValueError):
    """An argument is outside its admissible domain."""

    code = "invalid_parameter"


class EvaluationError(QsbsError, ArithmeticError):
    """A numerical evaluation produced a non-finite value."""

    code = "evaluation_failure"


class MomentError(QsbsError, ValueError):
    """A requested moment of the mixing variable does not exist."""

    code = "moment_does_not_exist"

    def __init__(self, message: str, order: int):
        super().__init__(message)
        self.order = order


class DataError(QsbsError, ValueError):
    """Input data failed validation (missing column, bad cell, rank...)."""

    code = "invalid_data"


class RankDeficiencyError(DataError):
    """The design matrix does not have full column rank."""

    code = "rank_deficient_design"

    def __init__(self, message: str, columns: tuple[str, ...]):
        super().__init__(message)
        self.columns = columns


class SingularInformationError(QsbsError, ArithmeticError):
    """The empirical information matrix cannot be inverted."""

    code = "singular_information"

    def __init__(self, message: str, direction: dict[str, float]):
        super().__init__(message)
        self.direction = direction


class ConvergenceError(QsbsError, RuntimeError):
    """A fit that had to converge did not."""

    code = "non_convergence"
