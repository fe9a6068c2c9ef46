"""
Exception hierarchy for the toolkit.

Every error carries the process exit code the CLI reports for it.
"""

import config


class CrashBayesError(Exception):
    """Base class of all toolkit errors."""

    exit_code = config.EXIT_NUMERICAL
    family = "error"


class UsageError(CrashBayesError):
    """Bad invocation: missing paths, invalid config values."""

    exit_code = config.EXIT_USAGE
    family = "usage"


class DataError(CrashBayesError):
    """Problem with input records or the coded design."""

    exit_code = config.EXIT_DATA
    family = "data"


class NumericalError(CrashBayesError):
    """Problem during model evaluation, sampling or summarizing."""

    exit_code = config.EXIT_NUMERICAL
    family = "numerical"


# dataset
class MissingColumn(DataError):
    pass


class UnknownColumn(DataError):
    pass


class MalformedNumeric(DataError):
    def __init__(self, row: int, column: str, value: str):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"row {row}, column '{column}': cannot parse {value!r} as a number")


class DuplicateCrashId(DataError):
    pass


class AmbiguousMatch(DataError):
    pass


class UnclassifiableRecord(DataError):
    pass


class NegativeCount(DataError):
    pass


class OutOfRangeContinuous(DataError):
    pass


class UndeclaredLevel(DataError):
    pass


class EmptyGroup(DataError):
    pass


class ConstantColumn(DataError):
    pass


class CatalogError(DataError):
    pass


# screening
class UnderdeterminedDesign(DataError):
    pass


# model
class DimensionMismatch(NumericalError):
    pass


class NonBinaryResponse(DataError):
    pass


class NonPositiveVariance(NumericalError):
    pass


class InvalidModelSpec(UsageError):
    pass


# sampler
class NonFiniteLogPosterior(NumericalError):
    pass


class StuckChain(NumericalError):
    pass


class ConvergenceFailure(NumericalError):
    pass


# evaluation
class InsufficientDraws(NumericalError):
    pass


class DegenerateDraws(NumericalError):
    pass


class TooFewTailSamples(NumericalError):
    pass


class AllEqualTail(NumericalError):
    pass


class MismatchedDataset(DataError):
    pass


class InsufficientModels(UsageError):
    pass


class MissingFit(UsageError):
    pass


# synthlab
class RangeTooNarrow(NumericalError):
    pass
