"""
Frozen patch feature extractor

A fixed, seeded linear patch embedding with a positional table. It stands in
for a frozen pretrained vision backbone: its parameters are buffers, so they
never appear in ``parameters()`` and no optimizer can touch them.
"""

import math

import torch
from torch import nn

from ..core.exceptions import ShapeError
from ..core.tensor import RandomSource, matmul, patchify


class PatchFeatureExtractor(nn.Module):

    def __init__(self, image_size: int, patch_size: int, d_enc: int, rng: RandomSource, channels: int = 3):
        super().__init__()
        if image_size % patch_size:
            raise ShapeError(
                f"image size {image_size} is not divisible by patch size {patch_size}",
                shapes=[(image_size, image_size), (patch_size, patch_size)],
                operation="PatchFeatureExtractor",
            )
        self.image_size = image_size
        self.patch_size = patch_size
        self.channels = channels
        self.d_enc = d_enc
        patch_pixels = patch_size * patch_size * channels
        self.register_buffer("embed", rng.child(0).normal(patch_pixels, d_enc, std=1.0 / math.sqrt(patch_pixels)))
        self.register_buffer("bias", rng.child(1).normal(1, d_enc, std=0.1))
        self.register_buffer("positional", rng.child(2).normal(self.num_patches, d_enc, std=0.5))

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return extract_features(image, self)


def extract_features(image: torch.Tensor, extractor: PatchFeatureExtractor) -> torch.Tensor:
    """(H, W, C) model-space image -> (P x d_enc) feature tokens"""
    patches = patchify(image, extractor.patch_size)
    if patches.shape[0] != extractor.num_patches:
        raise ShapeError(
            f"image {tuple(image.shape)} yields {patches.shape[0]} patches, extractor expects {extractor.num_patches}",
            shapes=[tuple(image.shape)],
            operation="extract_features",
        )
    return matmul(patches, extractor.embed) + extractor.bias + extractor.positional
