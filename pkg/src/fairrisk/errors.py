"""Exception types shared across the package.

The CLI maps these onto exit codes: ValidationError -> 2, input/output
problems -> 3, NumericError -> 4.
"""


class FairriskError(Exception):
    """Base class for all package errors."""


class ValidationError(FairriskError):
    """Invalid configuration or input data; message names the offending field."""


class ContractError(FairriskError):
    """A documented precondition was violated by the caller."""


class NumericError(FairriskError):
    """Non-finite values encountered during numeric computation."""


class UndefinedMetricError(FairriskError):
    """Metric is undefined for the given inputs (e.g. single-class AUC)."""


class SelectionFailedError(FairriskError):
    """No training epoch met the model selection criterion.

    Carries the best-AUC checkpoint so callers can still inspect the run.
    """

    def __init__(self, message, best_checkpoint=None, best_auc=None):
        super().__init__(message)
        self.best_checkpoint = best_checkpoint
        self.best_auc = best_auc
