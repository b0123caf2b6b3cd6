"""
Deterministic renderer for synthetic subjects in context

Layout of a 32x32 render: a 24x24 subject box whose outer 2 pixels are the
trim ring and whose inner 20x20 area holds the glyph as 4x4-pixel cells. The
box sits at rows 4..27; its left edge is at column 4 (center), 0 (left) or
8 (right). Styles are pure pixel maps applied after drawing: ``invert``
replaces every box pixel by 255 - value, ``outline`` draws a 1-pixel black
frame just outside the box.
"""

from typing import Dict, Tuple

import numpy as np

from ..core.models import BackgroundColor, IdentityParams, Position, PromptAttributes, Style
from .identity import BACKGROUND_COLORS, GLYPH_SIZE, glyph_cells

IMAGE_SIZE = 32
BOX_SIZE = 24
TRIM_WIDTH = 2
CELL_SIZE = 4
BOX_TOP = 4
BOX_LEFT: Dict[Position, int] = {Position.CENTER: 4, Position.LEFT: 0, Position.RIGHT: 8}
OUTLINE_COLOR = (0, 0, 0)

INPUT_ATTRIBUTES = PromptAttributes(background=BackgroundColor.WHITE, style=Style.PLAIN, position=Position.CENTER)


def box_slices(position: Position) -> Tuple[slice, slice]:
    left = BOX_LEFT[position]
    return slice(BOX_TOP, BOX_TOP + BOX_SIZE), slice(left, left + BOX_SIZE)


def subject_mask(position: Position) -> np.ndarray:
    """Pixels covered by the subject box"""
    mask = np.zeros((IMAGE_SIZE, IMAGE_SIZE), dtype=bool)
    rows, cols = box_slices(position)
    mask[rows, cols] = True
    return mask


def frame_mask(position: Position) -> np.ndarray:
    """1-pixel ring just outside the box, clipped to the image"""
    rows, cols = box_slices(position)
    grown = np.zeros((IMAGE_SIZE + 2, IMAGE_SIZE + 2), dtype=bool)
    grown[rows.start:rows.stop + 2, cols.start:cols.stop + 2] = True
    grown = grown[1:-1, 1:-1]
    return grown & ~subject_mask(position)


def draw_box(identity: IdentityParams) -> np.ndarray:
    """The 24x24 subject box before any style is applied"""
    box = np.empty((BOX_SIZE, BOX_SIZE, 3), dtype=np.uint8)
    box[:, :] = identity.trim
    cells = glyph_cells(identity.glyph_id)
    inner = TRIM_WIDTH
    for r in range(GLYPH_SIZE):
        for c in range(GLYPH_SIZE):
            top = inner + r * CELL_SIZE
            left = inner + c * CELL_SIZE
            box[top:top + CELL_SIZE, left:left + CELL_SIZE] = identity.body if cells[r, c] else identity.accent
    return box


def render(identity: IdentityParams, attributes: PromptAttributes) -> np.ndarray:
    """32x32 RGB uint8 render of the subject in context"""
    image = np.empty((IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.uint8)
    image[:, :] = BACKGROUND_COLORS[attributes.background]
    box = draw_box(identity)
    if attributes.style is Style.INVERT:
        box = 255 - box
    rows, cols = box_slices(attributes.position)
    image[rows, cols] = box
    if attributes.style is Style.OUTLINE:
        image[frame_mask(attributes.position)] = OUTLINE_COLOR
    return image


def render_input(identity: IdentityParams) -> np.ndarray:
    """Reference image: the subject alone, plain, centered on white"""
    return render(identity, INPUT_ATTRIBUTES)
