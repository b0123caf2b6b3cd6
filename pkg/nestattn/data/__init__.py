"""
Synthetic subjects, prompts and training triplets
"""

from .dataset import (
    ALL_COMBINATIONS,
    SyntheticSample,
    build_dataset,
    build_dataset_from_config,
    dataset_checksum,
    held_out_prompts,
    load_dataset,
    save_dataset,
)
from .decode import decode_identity
from .identity import BACKGROUND_COLORS, PALETTE, glyph_cells, glyph_hamming, make_identities, make_identity
from .imageio import read_image, read_pgm, to_model_space, to_pixels, write_pgm, write_ppm
from .render import render, render_input, subject_mask
from .vocab import (
    DEFAULT_VOCABULARY,
    SUBJECT_WORDS,
    TokenizedPrompt,
    Vocabulary,
    detokenize,
    parse_attributes,
    prompt_text,
    prompt_words,
    tokenize,
    word_index,
)

__all__ = [
    "ALL_COMBINATIONS",
    "SyntheticSample",
    "build_dataset",
    "build_dataset_from_config",
    "dataset_checksum",
    "held_out_prompts",
    "load_dataset",
    "save_dataset",
    "decode_identity",
    "BACKGROUND_COLORS",
    "PALETTE",
    "glyph_cells",
    "glyph_hamming",
    "make_identities",
    "make_identity",
    "read_image",
    "read_pgm",
    "to_model_space",
    "to_pixels",
    "write_pgm",
    "write_ppm",
    "render",
    "render_input",
    "subject_mask",
    "DEFAULT_VOCABULARY",
    "SUBJECT_WORDS",
    "TokenizedPrompt",
    "Vocabulary",
    "detokenize",
    "parse_attributes",
    "prompt_text",
    "prompt_words",
    "tokenize",
    "word_index",
]
