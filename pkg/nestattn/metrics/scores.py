"""
Oracle scores on synthetic renders

identity_score compares the decoded subject with the reference identity:
half glyph agreement over the 12 free glyph bits, half mean closeness of the
three part colors. prompt_score is the mean of three checks of the prompt's
attributes: background color outside the subject, style, and position.
"""

from typing import Dict, Tuple

import numpy as np

from ..core.models import IdentityParams, Position, PromptAttributes, Style
from ..data.decode import SEARCH_POSITIONS, check_image, decode_identity, read_box
from ..data.identity import BACKGROUND_COLORS, GLYPH_BITS, glyph_hamming
from ..data.render import OUTLINE_COLOR, draw_box, frame_mask, subject_mask

# Euclidean RGB distance under which a pixel counts as matching a color
PIXEL_TOLERANCE = 48.0
# Fraction of matching pixels that counts as evidence
EVIDENCE_THRESHOLD = 0.5
# Distance between black and white
MAX_RGB_DISTANCE = 255.0 * np.sqrt(3.0)


def _color_closeness(a, b) -> float:
    distance = float(np.linalg.norm(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)))
    return 1.0 - min(1.0, distance / MAX_RGB_DISTANCE)


def identity_score(image: np.ndarray, identity: IdentityParams) -> float:
    """Weighted agreement in [0, 1]; an absent subject scores 0"""
    decoded = decode_identity(image)
    if decoded.absent:
        return 0.0
    found = decoded.identity
    glyph = 1.0 - glyph_hamming(found.glyph_id, identity.glyph_id) / GLYPH_BITS
    colors = np.mean([_color_closeness(a, b) for a, b in zip(found.part_colors, identity.part_colors)])
    return float(0.5 * glyph + 0.5 * colors)


def _near(pixels: np.ndarray, color) -> np.ndarray:
    return np.linalg.norm(pixels.astype(np.float64) - np.asarray(color, dtype=np.float64), axis=-1) <= PIXEL_TOLERANCE


def read_candidate(image: np.ndarray, position: Position, style: Style) -> Tuple[float, float]:
    """
    (decode confidence, match fraction) of the subject decoded at ``position``
    under ``style``. The match fraction counts box pixels within tolerance of
    a clean redraw of the decoded identity; both are 0 when nothing decodes.
    """
    decoded = decode_identity(image, position=position, style=style)
    if decoded.absent:
        return 0.0, 0.0
    observed = read_box(image, position, decoded.style)
    match = float(_near(observed, draw_box(decoded.identity).astype(np.float64)).mean())
    return decoded.confidence, match


def background_score(image: np.ndarray, attributes: PromptAttributes) -> float:
    """Fraction of pixels outside the subject and its frame that match the background color"""
    covered = subject_mask(attributes.position) | frame_mask(attributes.position)
    outside = image[~covered]
    return float(_near(outside, BACKGROUND_COLORS[attributes.background]).mean())


def style_score(image: np.ndarray, attributes: PromptAttributes) -> float:
    """
    1 when the box carries the prompt's style, else 0. Plain and inverted
    readings compete on decode confidence; the winner also needs evidence.
    """
    position = attributes.position
    plain_confidence, plain_match = read_candidate(image, position, Style.PLAIN)
    inverted_confidence, inverted_match = read_candidate(image, position, Style.INVERT)
    outlined = float(_near(image[frame_mask(position)], OUTLINE_COLOR).mean()) >= EVIDENCE_THRESHOLD

    if attributes.style is Style.INVERT:
        passed = inverted_match >= EVIDENCE_THRESHOLD and inverted_confidence > plain_confidence and not outlined
    else:
        passed = plain_match >= EVIDENCE_THRESHOLD and plain_confidence >= inverted_confidence
        passed = passed and outlined == (attributes.style is Style.OUTLINE)
    return 1.0 if passed else 0.0


def position_readings(image: np.ndarray) -> Dict[Position, Tuple[float, float]]:
    """Best (confidence, match) over plain and inverted readings at every position"""
    return {
        p: max(read_candidate(image, p, Style.PLAIN), read_candidate(image, p, Style.INVERT))
        for p in SEARCH_POSITIONS
    }


def position_score(image: np.ndarray, attributes: PromptAttributes) -> float:
    """1 when the subject reads at the prompt's position with evidence and at least as confidently as elsewhere"""
    readings = position_readings(image)
    confidence, match = readings[attributes.position]
    best = max(c for c, _ in readings.values())
    return 1.0 if match >= EVIDENCE_THRESHOLD and confidence >= best else 0.0


def prompt_score(image: np.ndarray, attributes: PromptAttributes) -> float:
    """Mean of the background, style and position checks, in [0, 1]"""
    image = check_image(image)
    parts = (
        background_score(image, attributes),
        style_score(image, attributes),
        position_score(image, attributes),
    )
    return float(np.mean(parts))
