"""Exception types shared across the package."""


class SGNPError(Exception):
    """Base class for all package errors."""


class NumericalError(SGNPError, ArithmeticError):
    """A computation produced a non-finite value or a factorization failed.

    ``op`` names the operation (or matrix) that failed so that callers can
    report something more useful than "nan somewhere".
    """

    def __init__(self, message, op=None, task=None):
        self.op = op
        self.task = task
        parts = [message]
        if op is not None:
            parts.append(f"op={op}")
        if task is not None:
            parts.append(f"task={task}")
        super().__init__(" | ".join(parts))


class ValidationError(SGNPError, ValueError):
    """Invalid arguments, configs or data."""


class SchemaError(ValidationError):
    """A file is missing a required column or field."""


class ParseError(ValidationError):
    """A file could not be parsed; carries the offending row when known."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)


class ResourceError(SGNPError):
    """A configured resource cap (e.g. grid size) would be exceeded."""


class TrainingError(SGNPError):
    """Training aborted; ``diagnostics`` holds whatever was collected."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
