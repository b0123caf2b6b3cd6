"""
Competing subject-injection mechanisms

All four run against the same host cross-attention layer and the same
encoder tokens as nested attention, so comparisons differ only in how the
tokens enter the layer:

- decoupled CA: a parallel image cross-attention sharing the host queries,
  its output scaled and added to the text branch;
- simple adapter: image tokens projected to the text width and appended to
  the prompt tokens of the existing layer;
- global V: the subject's value is one projected mean of the tokens, the
  same for every query;
- multiple tokens: the subject token is replaced by one token per encoder
  output, all sharing the subject's key, each with its own value.
"""

from typing import Optional

import torch
from torch import nn

from ..attention.capture import AttentionCapture
from ..attention.layers import CrossAttentionLayer, init_projection
from ..attention.nested import (
    apply_attention_factor,
    attention_logits,
    cross_attention_forward,
    project_text,
)
from ..core.exceptions import ShapeError, ValidationError
from ..core.tensor import RandomSource, matmul, softmax_rows


class DecoupledCAParams(nn.Module):
    """Image-side key/value projections of one decoupled layer; shares W_Q with the host"""

    def __init__(self, layer_id: int, enc_dim: int, d: int, rng: RandomSource, init_std: float = 0.02,
                 scale: float = 1.0):
        super().__init__()
        self.layer_id = layer_id
        self.d = d
        # small, not zero: a zero branch gets no gradient at the first step
        self.w_k = init_projection(rng.child(0), enc_dim, d, std=init_std)
        self.w_v = init_projection(rng.child(1), enc_dim, d, std=init_std)
        self.scale = scale


class ValueProjection(nn.Module):
    """Per-layer projection of encoder tokens into subject values (global V, multiple tokens)"""

    def __init__(self, layer_id: int, enc_dim: int, d: int, rng: RandomSource):
        super().__init__()
        self.layer_id = layer_id
        self.d = d
        self.w_v = init_projection(rng.child(0), enc_dim, d)


class TokenProjection(nn.Module):
    """Single learned map from encoder tokens to the text-embedding width (simple adapter)"""

    def __init__(self, enc_dim: int, text_dim: int, rng: RandomSource):
        super().__init__()
        self.w = init_projection(rng.child(0), enc_dim, text_dim)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return matmul(tokens, self.w)


def _check_tokens(enc_tokens: torch.Tensor, w: torch.Tensor, operation: str) -> None:
    if enc_tokens.dim() != 2 or enc_tokens.shape[1] != w.shape[0]:
        raise ShapeError(
            f"encoder tokens {tuple(enc_tokens.shape)} do not match projection {tuple(w.shape)}",
            shapes=[tuple(enc_tokens.shape), tuple(w.shape)],
            operation=operation,
        )


def decoupled_ca_forward(
    features: torch.Tensor,
    text_emb: torch.Tensor,
    enc_tokens: torch.Tensor,
    layer: CrossAttentionLayer,
    params: DecoupledCAParams,
    scale: Optional[float] = None,
) -> torch.Tensor:
    """text attention + scale * image attention, both driven by the host queries"""
    scale = params.scale if scale is None else scale
    if scale < 0:
        raise ValidationError("decoupled scale must be non-negative", field="scale", value=scale)
    text_out = cross_attention_forward(features, text_emb, layer)
    if scale == 0:
        return text_out
    _check_tokens(enc_tokens, params.w_k, "decoupled_ca_forward")
    q = matmul(features, layer.w_q)
    image_k = matmul(enc_tokens, params.w_k)
    image_v = matmul(enc_tokens, params.w_v)
    image_weights = softmax_rows(attention_logits(q, image_k, layer.d))
    return text_out + scale * matmul(image_weights, image_v)


def simple_adapter_forward(
    features: torch.Tensor,
    text_emb: torch.Tensor,
    enc_tokens_projected: Optional[torch.Tensor],
    layer: CrossAttentionLayer,
) -> torch.Tensor:
    """Plain cross-attention over [prompt tokens; projected image tokens]"""
    if enc_tokens_projected is None or enc_tokens_projected.shape[0] == 0:
        return cross_attention_forward(features, text_emb, layer)
    if enc_tokens_projected.shape[1] != text_emb.shape[1]:
        raise ShapeError(
            "projected image tokens must match the text-embedding width",
            shapes=[tuple(enc_tokens_projected.shape), tuple(text_emb.shape)],
            operation="simple_adapter_forward",
        )
    return cross_attention_forward(features, torch.cat([text_emb, enc_tokens_projected], dim=0), layer)


def global_v_forward(
    features: torch.Tensor,
    text_emb: torch.Tensor,
    enc_tokens: torch.Tensor,
    layer: CrossAttentionLayer,
    projection: ValueProjection,
    subject_index: int,
    lam: float = 1.0,
    capture: Optional[AttentionCapture] = None,
) -> torch.Tensor:
    """V[s*] replaced by projection(mean of encoder tokens), identical for every query"""
    _check_tokens(enc_tokens, projection.w_v, "global_v_forward")
    q, k, v = project_text(features, text_emb, layer)
    logits = apply_attention_factor(attention_logits(q, k, layer.d), subject_index, lam)
    weights = softmax_rows(logits)
    global_value = matmul(enc_tokens.mean(dim=0, keepdim=True), projection.w_v)
    mask = torch.zeros(v.shape[0], 1, dtype=torch.bool)
    mask[subject_index] = True
    values = torch.where(mask, global_value, v)
    if capture is not None:
        per_query = global_value.expand(q.shape[0], -1)
        capture.record(
            layer_id=layer.layer_id,
            subject_index=subject_index,
            external_weights=weights,
            values=per_query,
            raw_values=per_query,
            v_star_norm=torch.linalg.vector_norm(v[subject_index]),
        )
    return matmul(weights, values)


def multiple_tokens_forward(
    features: torch.Tensor,
    text_emb: torch.Tensor,
    enc_values: torch.Tensor,
    layer: CrossAttentionLayer,
    subject_index: int,
    lam: float = 1.0,
) -> torch.Tensor:
    """
    The subject token becomes M tokens that all use K[s*] as their key and
    each carry one encoder-produced value. Softmax runs over T - 1 + M logits;
    the attention factor applies to every copy.
    """
    q, k, v = project_text(features, text_emb, layer)
    if not 0 <= subject_index < k.shape[0]:
        raise ValidationError(f"subject index {subject_index} is outside the prompt", field="subject_index",
                              value=subject_index)
    if enc_values.dim() != 2 or enc_values.shape[1] != v.shape[1] or enc_values.shape[0] < 1:
        raise ShapeError("encoder values must be (M x d) with M >= 1",
                         shapes=[tuple(enc_values.shape), tuple(v.shape)], operation="multiple_tokens_forward")
    if lam < 1:
        raise ValidationError("attention factor lambda must be >= 1", field="lambda", value=lam)
    logits = attention_logits(q, k, layer.d)
    keep = [i for i in range(k.shape[0]) if i != subject_index]
    subject_logits = logits[:, subject_index:subject_index + 1].expand(-1, enc_values.shape[0])
    if lam != 1:
        subject_logits = torch.maximum(subject_logits, lam * subject_logits)
    weights = softmax_rows(torch.cat([logits[:, keep], subject_logits], dim=1))
    return matmul(weights, torch.cat([v[keep], enc_values], dim=0))
