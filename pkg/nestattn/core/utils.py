"""
Utility functions for nestattn
"""

import hashlib
from pathlib import Path
from typing import Iterable, Tuple, Union

import numpy as np
import torch

from .exceptions import FileError


def ensure_directory(path: Union[str, Path]) -> Path:
    """
    Ensure directory exists, create if it doesn't

    Args:
        path: Directory path

    Returns:
        Path object
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def prepare_output_directory(path: Union[str, Path], force: bool = False) -> Path:
    """
    Create an output directory, refusing to reuse a non-empty one

    Args:
        path: Directory path
        force: Allow writing into an existing non-empty directory

    Returns:
        Path object
    """
    path = Path(path)
    if path.exists() and not path.is_dir():
        raise FileError(f"Output path exists and is not a directory: {path}", file_path=str(path), operation="mkdir")
    if path.is_dir() and any(path.iterdir()) and not force:
        raise FileError(
            f"Output directory {path} is not empty (use --force to overwrite)",
            file_path=str(path),
            operation="mkdir",
        )
    return ensure_directory(path)


def tensor_checksum(named: Iterable[Tuple[str, torch.Tensor]]) -> str:
    """SHA-256 over names and little-endian float64 payloads, in the given order"""
    hash_func = hashlib.sha256()
    for name, tensor in named:
        hash_func.update(name.encode("utf-8"))
        array = tensor.detach().cpu().numpy().astype("<f8", copy=False)
        hash_func.update(np.ascontiguousarray(array).tobytes())
    return hash_func.hexdigest()


def module_checksum(module: torch.nn.Module) -> str:
    """Checksum over a module's full state (parameters and buffers)"""
    return tensor_checksum(sorted(module.state_dict().items()))
