"""Exception types shared across the package."""


class LgmError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(LgmError):
    """Cholesky pivot fell below the positivity threshold."""

    def __init__(self, row: int, pivot: float):
        self.row = row
        self.pivot = pivot
        super().__init__(f"non-positive pivot {pivot:.3e} at permuted row {row}")


class MissingEntry(LgmError):
    """A requested matrix entry lies outside the stored sparsity pattern."""


class ModelSpecError(LgmError):
    """Model description text failed to parse or validate."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataError(LgmError):
    """Observation data violates the likelihood's support or shape rules."""


class UnknownColumn(DataError):
    """A column named by the model description is absent from the data."""


class EmptyComponent(DataError):
    """A component resolved to zero latent variables or zero usable rows."""


class NonFiniteCovariate(DataError):
    """A bound data column contains NaN or infinity."""


class FitError(LgmError):
    """Inference could not proceed (non-convergence, degenerate posterior)."""
