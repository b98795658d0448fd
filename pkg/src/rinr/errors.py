"""Exception taxonomy shared by all rinr modules.

The CLI maps these onto exit codes: usage errors exit 1, data/format/integrity
errors exit 2, numeric failures exit 3.
"""


class RinrError(Exception):
    """Base class for all rinr errors."""


class InvalidInputError(RinrError, ValueError):
    """Caller passed inconsistent shapes, dimensions or values."""


class NumericError(RinrError, ArithmeticError):
    """Non-finite values where finite numbers are required."""


class TrainingError(NumericError):
    """Training diverged; carries the step index at which loss went non-finite."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class StructuralError(RinrError):
    """A transform would destroy model structure (e.g. prune a whole layer)."""


class FormatError(RinrError):
    """A model or record is malformed (missing/mismatched metadata)."""


class IntegrityError(RinrError):
    """An archive failed validation (bad magic, truncation, CRC mismatch)."""

    def __init__(self, message: str, record: str | None = None):
        super().__init__(message)
        self.record = record


class BatchItemError(RinrError):
    """A batch operation failed on one item; carries its index."""

    def __init__(self, index: int, cause: Exception):
        super().__init__(f"item {index}: {cause}")
        self.index = index
        self.cause = cause
