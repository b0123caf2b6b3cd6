"""
Binary PPM (P6) and PGM (P5) codecs plus pixel/model-space conversion
"""

import re
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import torch

from ..core.exceptions import FileError
from ..core.tensor import DTYPE

_HEADER = re.compile(rb"^(P[56])\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s")


def _encode(magic: str, pixels: np.ndarray) -> bytes:
    height, width = pixels.shape[:2]
    header = f"{magic}\n{width} {height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()


def _decode(data: bytes, path: str) -> Tuple[str, np.ndarray]:
    match = _HEADER.match(data)
    if match is None:
        raise FileError(f"Not a binary PPM/PGM file: {path}", file_path=path, operation="read")
    magic = match.group(1).decode("ascii")
    width, height, maxval = (int(match.group(i)) for i in (2, 3, 4))
    if maxval != 255:
        raise FileError(f"Only 8-bit images are supported (maxval {maxval})", file_path=path, operation="read")
    channels = 3 if magic == "P6" else 1
    payload = data[match.end():]
    expected = width * height * channels
    if len(payload) < expected:
        raise FileError(f"Truncated image payload in {path}", file_path=path, operation="read")
    pixels = np.frombuffer(payload[:expected], dtype=np.uint8).reshape(height, width, channels)
    return magic, pixels.copy()


def write_ppm(path: Union[str, Path], pixels: np.ndarray) -> Path:
    """Write an (H, W, 3) uint8 array as P6"""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise FileError(f"PPM needs an (H, W, 3) array, got {pixels.shape}", file_path=str(path), operation="write")
    path = Path(path)
    path.write_bytes(_encode("P6", pixels))
    return path


def write_pgm(path: Union[str, Path], pixels: np.ndarray) -> Path:
    """Write an (H, W) uint8 array as P5"""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise FileError(f"PGM needs an (H, W) array, got {pixels.shape}", file_path=str(path), operation="write")
    path = Path(path)
    path.write_bytes(_encode("P5", pixels))
    return path


def read_image(path: Union[str, Path]) -> np.ndarray:
    """Read a PPM as (H, W, 3) or a PGM as (H, W, 3) with the gray channel repeated"""
    path = Path(path)
    if not path.is_file():
        raise FileError(f"Image not found: {path}", file_path=str(path), operation="read")
    magic, pixels = _decode(path.read_bytes(), str(path))
    if magic == "P5":
        pixels = np.repeat(pixels, 3, axis=2)
    return pixels


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileError(f"Image not found: {path}", file_path=str(path), operation="read")
    magic, pixels = _decode(path.read_bytes(), str(path))
    if magic != "P5":
        raise FileError(f"Expected a PGM file: {path}", file_path=str(path), operation="read")
    return pixels[:, :, 0]


def to_model_space(pixels: np.ndarray) -> torch.Tensor:
    """uint8 [0, 255] -> float64 [-1, 1]"""
    return torch.from_numpy(np.asarray(pixels, dtype=np.float64) / 127.5 - 1.0).to(DTYPE)


def to_pixels(image: torch.Tensor) -> np.ndarray:
    """float64 [-1, 1] -> uint8 [0, 255], clamped and rounded"""
    array = image.detach().cpu().numpy()
    return np.clip(np.rint((array + 1.0) * 127.5), 0, 255).astype(np.uint8)


def heatmap(values: np.ndarray) -> np.ndarray:
    """Min-max renormalize to [0, 255]; a constant map renders black"""
    values = np.asarray(values, dtype=np.float64)
    low, high = float(values.min()), float(values.max())
    if high <= low:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.rint((values - low) / (high - low) * 255.0).astype(np.uint8)
