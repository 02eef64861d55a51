from typing import Optional


class EstimationError(Exception):
    """Base class for every error raised by the estimator"""


class DatasetError(EstimationError, ValueError):
    """Invalid input data, optionally located by row and column"""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{' '.join(location)}: {message}"
        super().__init__(message)


class EmptyDatasetError(DatasetError):
    """A dataset with no observed units reached an operation that needs n_c >= 1"""


class ModelSpecError(EstimationError, ValueError):
    """Unknown model name or malformed term list"""


class ZeroOverlapError(EstimationError, ZeroDivisionError):
    """Petersen estimate requested for a table with c11 = 0"""


class DivisionByZeroError(EstimationError, ZeroDivisionError):
    """Odd/even imputation with a vanishing even-sum cell"""


class NonConvergenceError(EstimationError):
    """Newton iterations exhausted before the gradient tolerance was met"""


class InadmissibleModelError(EstimationError, ValueError):
    """AICc requested with eta <= q + 2"""


class BandwidthSelectionError(EstimationError, ValueError):
    """Cross-validation cannot be carried out on this input"""


class BootstrapError(EstimationError):
    """Too many bootstrap replicates failed"""
