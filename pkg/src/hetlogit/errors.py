"""Exception hierarchy shared across the package.

CLI exit codes: usage errors exit 2 (argparse), DataError and subclasses
exit 3, EstimationError and subclasses exit 4.
"""


class HetlogitError(Exception):
    """Base class for package errors."""


class ConfigurationError(HetlogitError):
    """Invalid specification or configuration values."""


class InputError(HetlogitError):
    """Malformed in-memory inputs (shape or width mismatches, non-finite values)."""


class DataError(HetlogitError):
    """Problems with external data files."""


class IngestionError(DataError):
    """Raw survey file does not match the expected schema."""


class EstimationError(HetlogitError):
    """An estimator failed to produce a result."""

    def __init__(self, message, *, fold=None, repetition=None):
        super().__init__(message)
        self.fold = fold
        self.repetition = repetition


class TrainingDivergedError(EstimationError):
    """Network training hit a non-finite loss or gradient."""

    def __init__(self, message, *, epoch):
        super().__init__(message)
        self.epoch = epoch


class DesignError(EstimationError):
    """Design matrix is rank deficient on the supplied data."""


class BootstrapError(EstimationError):
    """Too many bootstrap refits failed."""
