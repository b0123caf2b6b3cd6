"""
Core utilities for nestattn
Contains configuration, logging, exceptions, domain records and tensor primitives
"""

from .config import RunConfig, Settings, get_settings, load_run_config
from .logging import setup_logging, get_logger
from .exceptions import (
    NestAttnException,
    ValidationError,
    ShapeError,
    DegenerateError,
    ConfigurationError,
    CheckpointError,
    TrainingError,
    InvariantError,
    BudgetMismatchError,
    FileError,
)
from .models import (
    BackgroundColor,
    DecodeResult,
    IdentityParams,
    MechanismKind,
    MetricRecord,
    Position,
    PromptAttributes,
    Style,
    TradeoffCurve,
)
from .tensor import RandomSource, grad_check, matmul, softmax_rows

__all__ = [
    # Configuration
    "RunConfig",
    "Settings",
    "get_settings",
    "load_run_config",

    # Logging
    "setup_logging",
    "get_logger",

    # Exceptions
    "NestAttnException",
    "ValidationError",
    "ShapeError",
    "DegenerateError",
    "ConfigurationError",
    "CheckpointError",
    "TrainingError",
    "InvariantError",
    "BudgetMismatchError",
    "FileError",

    # Models
    "BackgroundColor",
    "DecodeResult",
    "IdentityParams",
    "MechanismKind",
    "MetricRecord",
    "Position",
    "PromptAttributes",
    "Style",
    "TradeoffCurve",

    # Tensors
    "RandomSource",
    "grad_check",
    "matmul",
    "softmax_rows",
]
