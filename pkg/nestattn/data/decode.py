"""
Identity decoder: the oracle behind the identity metric

The decoder reads the subject box at a candidate position, undoes the invert
style if assumed, snaps the trim ring and the anchor cells to the palette,
classifies every glyph cell as body or accent and picks the nearest glyph by
Hamming distance. Each candidate gets a confidence of 1 - mean absolute
pixel error between the observed box and a clean redraw of the decoded
identity; the best candidate wins.
"""

from typing import Iterable, List, Optional, Tuple

import numpy as np

from ..core.exceptions import ShapeError
from ..core.models import DecodeResult, IdentityParams, Position, Style
from .identity import (
    ACCENT_ANCHORS,
    BODY_ANCHORS,
    GLYPH_SIZE,
    glyph_cells,
    nearest_background_distance,
    nearest_glyph,
    nearest_palette,
)
from .render import BOX_SIZE, CELL_SIZE, IMAGE_SIZE, TRIM_WIDTH, box_slices, draw_box

SEARCH_POSITIONS = (Position.CENTER, Position.LEFT, Position.RIGHT)
SEARCH_STYLES = (Style.PLAIN, Style.INVERT)

_RING = np.ones((BOX_SIZE, BOX_SIZE), dtype=bool)
_RING[TRIM_WIDTH:-TRIM_WIDTH, TRIM_WIDTH:-TRIM_WIDTH] = False


def check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
        raise ShapeError(f"expected a {IMAGE_SIZE}x{IMAGE_SIZE} RGB image, got {image.shape}",
                         shapes=[image.shape], operation="decode_identity")
    return image


def read_box(image: np.ndarray, position: Position, style: Style) -> np.ndarray:
    """Box pixels as float64, with the invert style undone"""
    rows, cols = box_slices(position)
    box = np.asarray(image[rows, cols], dtype=np.float64)
    if style is Style.INVERT:
        box = 255.0 - box
    return box


def cell_means(box: np.ndarray) -> np.ndarray:
    """(5, 5, 3) mean color of each glyph cell"""
    inner = box[TRIM_WIDTH:TRIM_WIDTH + GLYPH_SIZE * CELL_SIZE, TRIM_WIDTH:TRIM_WIDTH + GLYPH_SIZE * CELL_SIZE]
    return inner.reshape(GLYPH_SIZE, CELL_SIZE, GLYPH_SIZE, CELL_SIZE, 3).mean(axis=(1, 3))


def _decode_candidate(image: np.ndarray, position: Position, style: Style) -> Optional[DecodeResult]:
    box = read_box(image, position, style)
    ring_mean = box[_RING].mean(axis=0)
    trim, trim_distance = nearest_palette(ring_mean)
    if nearest_background_distance(ring_mean) < trim_distance:
        return None

    means = cell_means(box)
    body, _ = nearest_palette(np.mean([means[r, c] for r, c in BODY_ANCHORS], axis=0))
    accent, _ = nearest_palette(np.mean([means[r, c] for r, c in ACCENT_ANCHORS], axis=0))
    if body == accent:
        return None

    to_body = np.linalg.norm(means - np.asarray(body, dtype=np.float64), axis=2)
    to_accent = np.linalg.norm(means - np.asarray(accent, dtype=np.float64), axis=2)
    glyph_id = nearest_glyph(to_body < to_accent)
    identity = IdentityParams(glyph_id=glyph_id, body=body, accent=accent, trim=trim)

    error = np.abs(box - draw_box(identity).astype(np.float64)).mean() / 255.0
    return DecodeResult(
        identity=identity,
        cells=tuple(bool(v) for v in glyph_cells(glyph_id).reshape(-1)),
        position=position,
        style=style,
        confidence=float(np.clip(1.0 - error, 0.0, 1.0)),
    )


def _candidates(position: Optional[Position], style: Optional[Style]) -> List[Tuple[Position, Style]]:
    positions: Iterable[Position] = (position,) if position is not None else SEARCH_POSITIONS
    if style is None:
        styles: Iterable[Style] = SEARCH_STYLES
    else:
        # outline leaves the box itself untouched
        styles = (Style.INVERT,) if style is Style.INVERT else (Style.PLAIN,)
    return [(p, s) for p in positions for s in styles]


def decode_identity(image: np.ndarray, position: Optional[Position] = None,
                    style: Optional[Style] = None) -> DecodeResult:
    """
    Decode the subject of a 32x32 RGB image.

    With ``position`` / ``style`` unknown every candidate is tried and the
    most confident decode is returned. A result with ``absent=True`` means no
    candidate looked like a subject.
    """
    image = check_image(image)
    best: Optional[DecodeResult] = None
    for candidate_position, candidate_style in _candidates(position, style):
        result = _decode_candidate(image, candidate_position, candidate_style)
        if result is not None and (best is None or result.confidence > best.confidence):
            best = result
    return best if best is not None else DecodeResult(absent=True)
