"""
Synthetic subject identities

A subject is a left-right mirrored 5x5 glyph drawn in two colors (body on
filled cells, accent on empty cells) inside a frame of a third color (trim).
Three center-column cells are fixed so every glyph shows both colors; the
remaining twelve cells of the left half plus the center column are free,
giving 4096 glyphs.
"""

from typing import Dict, List, Tuple

import numpy as np

from ..core.models import RGB, BackgroundColor, IdentityParams
from ..core.tensor import RandomSource

GLYPH_SIZE = 5
GLYPH_BITS = 12
NUM_GLYPHS = 2 ** GLYPH_BITS

BACKGROUND_COLORS: Dict[BackgroundColor, RGB] = {
    BackgroundColor.WHITE: (255, 255, 255),
    BackgroundColor.RED: (220, 40, 40),
    BackgroundColor.GREEN: (40, 180, 60),
    BackgroundColor.BLUE: (40, 70, 220),
    BackgroundColor.YELLOW: (240, 220, 40),
    BackgroundColor.CYAN: (40, 210, 220),
    BackgroundColor.MAGENTA: (210, 50, 200),
    BackgroundColor.GRAY: (128, 128, 128),
}

# Subject colors; none of them is a background color
PALETTE: Dict[str, RGB] = {
    "orange": (255, 140, 0),
    "purple": (120, 40, 160),
    "pink": (255, 160, 200),
    "brown": (130, 80, 30),
    "navy": (20, 20, 90),
    "teal": (0, 110, 110),
    "olive": (110, 110, 0),
    "maroon": (110, 0, 30),
    "lime": (170, 255, 80),
    "sky": (130, 190, 255),
    "beige": (230, 210, 160),
    "charcoal": (50, 50, 50),
}

PALETTE_ARRAY = np.array(list(PALETTE.values()), dtype=np.float64)
BACKGROUND_ARRAY = np.array(list(BACKGROUND_COLORS.values()), dtype=np.float64)

# (row, col) -> bit index for the free cells of the left half and center column
_FREE_CELLS: List[Tuple[int, int]] = [(r, c) for r in range(GLYPH_SIZE) for c in (0, 1)] + [(1, 2), (3, 2)]
_FIXED_ON = ((0, 2), (4, 2))
_FIXED_OFF = ((2, 2),)

BODY_ANCHORS = _FIXED_ON
ACCENT_ANCHORS = _FIXED_OFF


def glyph_bits(glyph_id: int) -> np.ndarray:
    """The 12 free bits of a glyph, least significant first"""
    return np.array([(glyph_id >> i) & 1 for i in range(GLYPH_BITS)], dtype=bool)


def glyph_cells(glyph_id: int) -> np.ndarray:
    """5x5 boolean on/off pattern of a glyph"""
    if not 0 <= glyph_id < NUM_GLYPHS:
        raise ValueError(f"glyph id {glyph_id} outside [0, {NUM_GLYPHS})")
    cells = np.zeros((GLYPH_SIZE, GLYPH_SIZE), dtype=bool)
    for bit, (r, c) in zip(glyph_bits(glyph_id), _FREE_CELLS):
        cells[r, c] = bit
        cells[r, GLYPH_SIZE - 1 - c] = bit
    for r, c in _FIXED_ON:
        cells[r, c] = True
    for r, c in _FIXED_OFF:
        cells[r, c] = False
    return cells


# Flattened cell patterns of every glyph, for nearest-glyph search
GLYPH_TABLE = np.stack([glyph_cells(g).reshape(-1) for g in range(NUM_GLYPHS)])


def nearest_glyph(cells: np.ndarray) -> int:
    """Glyph id with the smallest Hamming distance to a 5x5 pattern (lowest id on ties)"""
    distances = np.count_nonzero(GLYPH_TABLE != np.asarray(cells, dtype=bool).reshape(1, -1), axis=1)
    return int(np.argmin(distances))


def glyph_hamming(a: int, b: int) -> int:
    return int(np.count_nonzero(glyph_bits(a) != glyph_bits(b)))


def nearest_palette(color) -> Tuple[RGB, float]:
    """Closest palette color and its Euclidean distance"""
    distances = np.linalg.norm(PALETTE_ARRAY - np.asarray(color, dtype=np.float64), axis=1)
    index = int(np.argmin(distances))
    return tuple(int(c) for c in PALETTE_ARRAY[index]), float(distances[index])


def nearest_background_distance(color) -> float:
    return float(np.linalg.norm(BACKGROUND_ARRAY - np.asarray(color, dtype=np.float64), axis=1).min())


def make_identity(rng: RandomSource) -> IdentityParams:
    """Uniform glyph; body and accent distinct palette colors; trim any palette color"""
    generator = rng.numpy
    glyph_id = int(generator.integers(0, NUM_GLYPHS))
    colors = list(PALETTE.values())
    body_index, accent_index = generator.choice(len(colors), size=2, replace=False)
    trim_index = int(generator.integers(0, len(colors)))
    return IdentityParams(
        glyph_id=glyph_id,
        body=colors[int(body_index)],
        accent=colors[int(accent_index)],
        trim=colors[trim_index],
    )


def make_identities(count: int, seed: int) -> List[IdentityParams]:
    """``count`` identities, each from its own stream of ``seed``"""
    root = RandomSource(seed)
    return [make_identity(root.child(i)) for i in range(count)]
