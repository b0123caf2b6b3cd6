"""
Dominant-token tracing

For a probed query of the generated image, the nested attention map names
the encoder token it draws its value from. Following that token's learned
query back through the Q-Former attention map gives the input-image patch the
value came from; a probe is a hit when that patch lies inside the subject.
"""

from typing import List, Sequence

import numpy as np
import torch

from ..core.exceptions import ShapeError


def _as_array(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x)


def dominant_tokens(nested_weights, probes: Sequence[int]) -> List[int]:
    weights = _as_array(nested_weights)
    return [int(np.argmax(weights[p])) for p in probes]


def patch_mask(mask: np.ndarray, patch: int) -> np.ndarray:
    """Pixel mask (H, W) -> patch grid mask; a patch counts when at least half of it is inside"""
    mask = np.asarray(mask, dtype=bool)
    height, width = mask.shape
    if height % patch or width % patch:
        raise ShapeError("mask is not divisible by the patch size", shapes=[mask.shape], operation="patch_mask")
    fractions = mask.reshape(height // patch, patch, width // patch, patch).mean(axis=(1, 3))
    return fractions >= 0.5


def query_mask(mask: np.ndarray, patch: int) -> np.ndarray:
    """Flattened patch-grid mask, in query order"""
    return patch_mask(mask, patch).reshape(-1)


def trace_dominant_tokens(nested_weights, qformer_maps, subject_mask: np.ndarray, probes: Sequence[int],
                          patch: int) -> float:
    """Fraction of probes whose dominant token's Q-Former map peaks inside the subject"""
    if not probes:
        return 0.0
    maps = _as_array(qformer_maps)
    inside = patch_mask(subject_mask, patch)
    if maps.shape[1:] != inside.shape:
        raise ShapeError("Q-Former maps and subject mask grids differ", shapes=[maps.shape, inside.shape],
                         operation="trace_dominant_tokens")
    hits = 0
    for token in dominant_tokens(nested_weights, probes):
        row, col = np.unravel_index(int(np.argmax(maps[token % maps.shape[0]])), inside.shape)
        hits += bool(inside[row, col])
    return hits / len(probes)
