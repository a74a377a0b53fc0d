"""Exception hierarchy shared by every service.

Validation problems map to CLI exit code 2, file-system problems to exit code 3.
"""
from typing import Optional


class VLVError(Exception):
    """Base class for all errors raised by the value-learning lab"""


class ValidationFailure(VLVError):
    """Inputs or artifacts that violate a precondition"""


class GenerationFailed(ValidationFailure):
    pass


class InvalidParams(ValidationFailure):
    pass


class InsufficientData(ValidationFailure):
    pass


class EmptyDataset(ValidationFailure):
    pass


class ShapeMismatch(ValidationFailure):
    pass


class HeapExhausted(ValidationFailure):
    pass


class GoalInObstacle(ValidationFailure):
    pass


class QuotaUnsatisfiable(ValidationFailure):
    pass


class PrivilegedAccessError(ValidationFailure):
    """Hidden ground truth requested through a public dataset handle"""


class HashMismatch(ValidationFailure):
    pass


class FormatError(ValidationFailure):
    """Malformed artifact file; carries the offending 1-based line number"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class IoFailure(VLVError):
    """Wraps OSError raised while reading or writing artifacts"""
