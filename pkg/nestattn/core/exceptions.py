"""
Custom exceptions for nestattn
"""

from typing import Optional, Dict, Any, Sequence


class NestAttnException(Exception):
    """Base exception for the nestattn library"""

    def __init__(self, message: str, error_code: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.error_code = error_code or self.__class__.__name__
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """Convert exception to dictionary for logs and CLI reports"""
        return {
            "error": self.message,
            "error_code": self.error_code,
            "details": self.details
        }


class ValidationError(NestAttnException):
    """Raised when an argument value is outside its allowed range"""

    def __init__(self, message: str, field: Optional[str] = None, value: Optional[Any] = None):
        details = {}
        if field:
            details["field"] = field
        if value is not None:
            details["value"] = value

        super().__init__(message, "VALIDATION_ERROR", details)


class ShapeError(NestAttnException):
    """Raised when tensor dimensions do not agree"""

    def __init__(self, message: str, shapes: Optional[Sequence[Sequence[int]]] = None, operation: Optional[str] = None):
        details: Dict[str, Any] = {}
        if shapes is not None:
            details["shapes"] = [list(s) for s in shapes]
        if operation:
            details["operation"] = operation

        super().__init__(message, "SHAPE_ERROR", details)


class DegenerateError(NestAttnException):
    """Raised when a direction is undefined (zero-norm vector or row)"""

    def __init__(self, message: str, layer_id: Optional[int] = None, row: Optional[int] = None):
        details = {}
        if layer_id is not None:
            details["layer_id"] = layer_id
        if row is not None:
            details["row"] = row

        super().__init__(message, "DEGENERATE_ERROR", details)


class ConfigurationError(NestAttnException):
    """Raised when configuration is invalid or missing"""

    def __init__(self, message: str, setting: Optional[str] = None, value: Optional[Any] = None):
        details = {}
        if setting:
            details["setting"] = setting
        if value is not None:
            details["value"] = value

        super().__init__(message, "CONFIGURATION_ERROR", details)


class CheckpointError(NestAttnException):
    """Raised when a checkpoint cannot be written, read or applied"""

    def __init__(self, message: str, path: Optional[str] = None, parameter: Optional[str] = None):
        details = {}
        if path:
            details["path"] = path
        if parameter:
            details["parameter"] = parameter

        super().__init__(message, "CHECKPOINT_ERROR", details)


class TrainingError(NestAttnException):
    """Raised when training diverges"""

    def __init__(self, message: str, step: Optional[int] = None, stage: Optional[str] = None,
                 diagnostics: Optional[Dict[str, Any]] = None):
        details: Dict[str, Any] = dict(diagnostics or {})
        if step is not None:
            details["step"] = step
        if stage:
            details["stage"] = stage

        super().__init__(message, "TRAINING_ERROR", details)


class InvariantError(NestAttnException):
    """Raised when an invariant check inside a run fails"""

    def __init__(self, message: str, check: Optional[str] = None, observed: Optional[Any] = None):
        details = {}
        if check:
            details["check"] = check
        if observed is not None:
            details["observed"] = observed

        super().__init__(message, "INVARIANT_ERROR", details)


class BudgetMismatchError(NestAttnException):
    """Raised when compared checkpoints were trained under different budgets"""

    def __init__(self, message: str, mechanism: Optional[str] = None, keys: Optional[Sequence[str]] = None):
        details: Dict[str, Any] = {}
        if mechanism:
            details["mechanism"] = mechanism
        if keys:
            details["keys"] = list(keys)

        super().__init__(message, "BUDGET_MISMATCH_ERROR", details)


class FileError(NestAttnException):
    """Raised when file operations fail"""

    def __init__(self, message: str, file_path: Optional[str] = None, operation: Optional[str] = None):
        details = {}
        if file_path:
            details["file_path"] = file_path
        if operation:
            details["operation"] = operation

        super().__init__(message, "FILE_ERROR", details)


def exit_code_for(exc: Exception) -> int:
    """Map an exception to the CLI exit code (1 usage/config, 2 invariant failure)"""
    if isinstance(exc, InvariantError):
        return 2
    return 1
