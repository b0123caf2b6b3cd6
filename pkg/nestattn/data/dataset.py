"""
Training triplets: (input image, prompt, target image)

Every sample has its own identity. Prompt attributes cycle through seeded
permutations of the allowed attribute combinations, which keeps marginals
balanced; the held-out evaluation combinations never appear in training.
"""

import hashlib
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..core.config import DataConfig
from ..core.exceptions import FileError, ValidationError
from ..core.logging import get_logger
from ..core.models import BackgroundColor, IdentityParams, Position, PromptAttributes, Style
from ..core.tensor import RandomSource
from ..core.utils import ensure_directory
from .identity import make_identity
from .imageio import read_image, write_ppm
from .render import render, render_input
from .vocab import prompt_text, tokenize

logger = get_logger(__name__)

MANIFEST = "manifest.csv"
MANIFEST_COLUMNS = [
    "sample_id", "glyph_id",
    "body_r", "body_g", "body_b", "accent_r", "accent_g", "accent_b", "trim_r", "trim_g", "trim_b",
    "background", "style", "position", "prompt", "input_file", "target_file",
]

# Stream ids under the dataset seed
_IDENTITY_STREAM = 0
_ATTRIBUTE_STREAM = 1
_HELD_OUT_STREAM = 2

ALL_COMBINATIONS: Tuple[PromptAttributes, ...] = tuple(
    PromptAttributes(background=b, style=s, position=p)
    for b, s, p in product(BackgroundColor, Style, Position)
)


@dataclass
class SyntheticSample:
    sample_id: int
    identity: IdentityParams
    attributes: PromptAttributes
    input_image: np.ndarray
    target_image: np.ndarray
    token_ids: Tuple[int, ...]
    subject_index: int

    @property
    def prompt(self) -> str:
        return prompt_text(self.attributes)


def held_out_prompts(count: int, seed: int) -> List[PromptAttributes]:
    """
    ``count`` distinct evaluation combinations (at most 24).

    Styles and positions are spread evenly; backgrounds follow a seeded order.
    """
    if not 1 <= count <= 24:
        raise ValidationError("held-out prompt count must lie in [1, 24]", field="count", value=count)
    backgrounds = list(BackgroundColor)
    order = RandomSource(seed, (_HELD_OUT_STREAM,)).permutation(len(backgrounds))
    styles = list(Style)
    positions = list(Position)
    return [
        PromptAttributes(
            background=backgrounds[int(order[i % len(backgrounds)])],
            style=styles[i % 3],
            position=positions[(i + i // 3) % 3],
        )
        for i in range(count)
    ]


def training_combinations(excluded: Sequence[PromptAttributes]) -> List[PromptAttributes]:
    blocked = {a.key for a in excluded}
    return [a for a in ALL_COMBINATIONS if a.key not in blocked]


def sample_attributes(n: int, rng: RandomSource, allowed: Sequence[PromptAttributes]) -> List[PromptAttributes]:
    """Cycle through fresh seeded permutations of ``allowed``"""
    if not allowed:
        raise ValidationError("no attribute combinations left for training", field="allowed")
    chosen: List[PromptAttributes] = []
    while len(chosen) < n:
        chosen.extend(allowed[int(i)] for i in rng.permutation(len(allowed)))
    return chosen[:n]


def make_sample(sample_id: int, identity: IdentityParams, attributes: PromptAttributes,
                max_tokens: int = 8) -> SyntheticSample:
    tokens = tokenize(prompt_text(attributes), max_tokens=max_tokens)
    return SyntheticSample(
        sample_id=sample_id,
        identity=identity,
        attributes=attributes,
        input_image=render_input(identity),
        target_image=render(identity, attributes),
        token_ids=tokens.token_ids,
        subject_index=tokens.subject_index,
    )


def build_dataset(n: int, seed: int, held_out: Optional[Sequence[PromptAttributes]] = None,
                  max_tokens: int = 8) -> List[SyntheticSample]:
    """
    ``n`` triplets, deterministic in ``seed``.

    ``held_out`` defaults to the 12 standard evaluation combinations; pass an
    empty sequence to train on every combination.
    """
    if n < 1:
        raise ValidationError("dataset size must be at least 1", field="n", value=n)
    if held_out is None:
        held_out = held_out_prompts(12, seed)
    root = RandomSource(seed)
    identities = root.child(_IDENTITY_STREAM)
    attributes = sample_attributes(n, root.child(_ATTRIBUTE_STREAM), training_combinations(held_out))
    return [
        make_sample(i, make_identity(identities.child(i)), attributes[i], max_tokens=max_tokens)
        for i in range(n)
    ]


def build_dataset_from_config(config: DataConfig, max_tokens: int = 8) -> List[SyntheticSample]:
    return build_dataset(
        config.n_samples,
        config.seed,
        held_out=held_out_prompts(config.held_out_prompts, config.seed),
        max_tokens=max_tokens,
    )


def _manifest_row(sample: SyntheticSample) -> dict:
    identity = sample.identity
    row = {"sample_id": sample.sample_id, "glyph_id": identity.glyph_id}
    for part in ("body", "accent", "trim"):
        for channel, value in zip("rgb", getattr(identity, part)):
            row[f"{part}_{channel}"] = value
    row.update({
        "background": sample.attributes.background.value,
        "style": sample.attributes.style.value,
        "position": sample.attributes.position.value,
        "prompt": sample.prompt,
        "input_file": f"{sample.sample_id:05d}_input.ppm",
        "target_file": f"{sample.sample_id:05d}_target.ppm",
    })
    return row


def save_dataset(samples: Sequence[SyntheticSample], directory: Union[str, Path]) -> Path:
    """Paired PPM files plus a CSV manifest"""
    directory = ensure_directory(directory)
    rows = []
    for sample in samples:
        row = _manifest_row(sample)
        write_ppm(directory / row["input_file"], sample.input_image)
        write_ppm(directory / row["target_file"], sample.target_image)
        rows.append(row)
    manifest = directory / MANIFEST
    pd.DataFrame(rows, columns=MANIFEST_COLUMNS).to_csv(manifest, index=False, lineterminator="\n")
    logger.info("Saved dataset", directory=str(directory), samples=len(rows))
    return manifest


def load_dataset(directory: Union[str, Path], max_tokens: int = 8) -> List[SyntheticSample]:
    directory = Path(directory)
    manifest = directory / MANIFEST
    if not manifest.is_file():
        raise FileError(f"No dataset manifest in {directory}", file_path=str(manifest), operation="read")
    frame = pd.read_csv(manifest, dtype={"prompt": str})
    samples = []
    for row in frame.itertuples(index=False):
        identity = IdentityParams(
            glyph_id=int(row.glyph_id),
            body=(int(row.body_r), int(row.body_g), int(row.body_b)),
            accent=(int(row.accent_r), int(row.accent_g), int(row.accent_b)),
            trim=(int(row.trim_r), int(row.trim_g), int(row.trim_b)),
        )
        attributes = PromptAttributes(background=BackgroundColor(row.background), style=Style(row.style),
                                      position=Position(row.position))
        tokens = tokenize(str(row.prompt), max_tokens=max_tokens)
        samples.append(SyntheticSample(
            sample_id=int(row.sample_id),
            identity=identity,
            attributes=attributes,
            input_image=read_image(directory / row.input_file),
            target_image=read_image(directory / row.target_file),
            token_ids=tokens.token_ids,
            subject_index=tokens.subject_index,
        ))
    return samples


def dataset_checksum(samples: Sequence[SyntheticSample]) -> str:
    """SHA-256 over identities, prompts and pixels, in sample order"""
    digest = hashlib.sha256()
    for sample in samples:
        digest.update(sample.identity.model_dump_json().encode("utf-8"))
        digest.update(sample.prompt.encode("utf-8"))
        digest.update(sample.input_image.tobytes())
        digest.update(sample.target_image.tobytes())
    return digest.hexdigest()
