"""Exception types shared across the package."""


class DataError(Exception):
    """Malformed or inconsistent input data (files, schemas, labels)."""


class MissingRatingError(DataError):
    """A rating required to evaluate a sentiment term is absent."""


class SummaryTooShortError(DataError):
    """Review has fewer sentences than aspects, so no one-per-aspect summary exists."""


class NumericalError(Exception):
    """Optimization produced a non-finite quantity or exceeded a hard budget."""


class BudgetExceededError(NumericalError):
    """Exact joint inference would enumerate more rating vectors than allowed."""


class UsageError(Exception):
    """Bad command-line invocation or configuration."""
