"""
Parameter containers and value types for cross-attention and nested attention
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import torch
from torch import nn

from ..core.exceptions import ShapeError, ValidationError
from ..core.tensor import RandomSource


def init_projection(rng: RandomSource, fan_in: int, fan_out: int, std: Optional[float] = None) -> nn.Parameter:
    """Seeded Gaussian projection matrix (fan_in x fan_out), std 1/sqrt(fan_in) by default"""
    std = 1.0 / math.sqrt(fan_in) if std is None else std
    return nn.Parameter(rng.normal(fan_in, fan_out, std=std))


class CrossAttentionLayer(nn.Module):
    """
    Single-head cross-attention projections of one host layer.

    ``w_q`` maps feature-map channels to ``d``; ``w_k`` and ``w_v`` map
    text-embedding channels to ``d``.
    """

    def __init__(self, layer_id: int, feature_dim: int, text_dim: int, d: int, rng: RandomSource):
        super().__init__()
        self.layer_id = layer_id
        self.d = d
        self.w_q = init_projection(rng.child(0), feature_dim, d)
        self.w_k = init_projection(rng.child(1), text_dim, d)
        self.w_v = init_projection(rng.child(2), text_dim, d)

    @property
    def feature_dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def text_dim(self) -> int:
        return self.w_k.shape[0]

    def check_inputs(self, features: torch.Tensor, text_emb: torch.Tensor) -> None:
        if features.dim() != 2 or features.shape[1] != self.feature_dim:
            raise ShapeError(
                f"layer {self.layer_id}: features {tuple(features.shape)} do not match W_Q {tuple(self.w_q.shape)}",
                shapes=[tuple(features.shape), tuple(self.w_q.shape)],
                operation="cross_attention",
            )
        if text_emb.dim() != 2 or text_emb.shape[1] != self.text_dim:
            raise ShapeError(
                f"layer {self.layer_id}: text embedding {tuple(text_emb.shape)} does not match W_K {tuple(self.w_k.shape)}",
                shapes=[tuple(text_emb.shape), tuple(self.w_k.shape)],
                operation="cross_attention",
            )
        if text_emb.shape[0] == 0:
            raise ShapeError("cross-attention needs at least one text token", shapes=[tuple(text_emb.shape)],
                             operation="cross_attention")


class NestedAttentionLayer(nn.Module):
    """Nested key/value projections (encoder-token dim -> d) paired with one host layer"""

    def __init__(self, layer_id: int, enc_dim: int, d: int, rng: RandomSource):
        super().__init__()
        self.layer_id = layer_id
        self.d = d
        self.w_k = init_projection(rng.child(0), enc_dim, d)
        self.w_v = init_projection(rng.child(1), enc_dim, d)

    @property
    def enc_dim(self) -> int:
        return self.w_k.shape[0]


@dataclass(eq=False)
class SubjectBinding:
    """
    Personalizes one prompt word.

    ``alpha=None`` disables the value-norm regularization. Bindings hash by
    identity so they can key per-binding layer maps.
    """

    subject_token_index: int
    encoder_tokens: torch.Tensor
    lam: float = 1.0
    alpha: Optional[float] = 2.0

    def __post_init__(self):
        if self.subject_token_index < 0:
            raise ValidationError("subject token index must be non-negative", field="subject_token_index",
                                  value=self.subject_token_index)
        if self.encoder_tokens.dim() != 2 or self.encoder_tokens.shape[0] < 1:
            raise ShapeError("a binding needs at least one encoder token (M >= 1)",
                             shapes=[tuple(self.encoder_tokens.shape)], operation="SubjectBinding")
        if self.lam < 1:
            raise ValidationError("attention factor lambda must be >= 1", field="lambda", value=self.lam)
        if self.alpha is not None and self.alpha <= 0:
            raise ValidationError("alpha must be positive", field="alpha", value=self.alpha)

    def check_prompt_length(self, length: int) -> None:
        if self.subject_token_index >= length:
            raise ValidationError(
                f"subject token index {self.subject_token_index} is outside a prompt of length {length}",
                field="subject_token_index",
                value=self.subject_token_index,
            )


@dataclass
class PerQueryValues:
    """One value vector per spatial query, with the nested weights that produced it"""

    values: torch.Tensor
    weights: Optional[torch.Tensor] = field(default=None, repr=False)

    @property
    def num_queries(self) -> int:
        return self.values.shape[0]
