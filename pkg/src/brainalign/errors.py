"""Exception types shared across the package."""


class BrainalignError(Exception):
    """Base class for all errors raised by this package."""


class ManifestError(BrainalignError):
    """Manifest file is missing, malformed, or violates its schema."""


class DataValidationError(BrainalignError):
    """A loaded matrix or catalog violates an alignment/shape/value invariant."""


class DegenerateInputError(BrainalignError):
    """An input is mathematically degenerate for the requested statistic
    (zero-norm vector, constant series, empty selection)."""


class TrainingError(BrainalignError):
    """Probe training failed (non-finite loss or no descent direction)."""
