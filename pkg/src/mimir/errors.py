"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when an input, configuration field, or file fails validation.

    The message names the offending field or file so callers can report
    actionable diagnostics (CLI maps this to exit code 2).
    """


class DataError(RuntimeError):
    """Raised when data is structurally valid but unusable for the
    requested operation (no overlapping subjects, no trainable rows, ...).
    CLI maps this to exit code 1.
    """


class CheckpointError(ValidationError):
    """Raised for unreadable, corrupted, or unsupported checkpoint files."""
