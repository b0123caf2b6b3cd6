"""
Cross-attention and the nested attention mechanism

The external layer is ordinary cross-attention over the prompt tokens. For a
bound subject token s*, its single value V[s*] is replaced, per query, by the
output of an inner ("nested") attention between that same query and keys and
values projected from the subject's encoder tokens. Keys and queries of the
external layer are never modified; only the subject's value changes.
"""

import math
from typing import Mapping, Optional, Sequence, Tuple, Union

import torch

from ..core.exceptions import ShapeError, ValidationError
from ..core.tensor import matmul, rescale_rows, softmax_rows
from .capture import AttentionCapture
from .layers import CrossAttentionLayer, NestedAttentionLayer, PerQueryValues, SubjectBinding

KeyValues = Tuple[torch.Tensor, torch.Tensor]


def attention_logits(queries: torch.Tensor, keys: torch.Tensor, d: int) -> torch.Tensor:
    """QK^T / sqrt(d)"""
    return matmul(queries, keys.transpose(0, 1)) / math.sqrt(d)


def project_text(features: torch.Tensor, text_emb: torch.Tensor, layer: CrossAttentionLayer) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    layer.check_inputs(features, text_emb)
    q = matmul(features, layer.w_q)
    k = matmul(text_emb, layer.w_k)
    v = matmul(text_emb, layer.w_v)
    return q, k, v


def cross_attention_forward(features: torch.Tensor, text_emb: torch.Tensor, layer: CrossAttentionLayer) -> torch.Tensor:
    """softmax(QK^T / sqrt(d)) V for one host layer"""
    q, k, v = project_text(features, text_emb, layer)
    weights = softmax_rows(attention_logits(q, k, layer.d))
    return matmul(weights, v)


def nested_keys_values(tokens: torch.Tensor, nested: NestedAttentionLayer) -> KeyValues:
    if tokens.dim() != 2 or tokens.shape[1] != nested.enc_dim:
        raise ShapeError(
            f"encoder tokens {tuple(tokens.shape)} do not match nested projection {tuple(nested.w_k.shape)}",
            shapes=[tuple(tokens.shape), tuple(nested.w_k.shape)],
            operation="nested_keys_values",
        )
    return matmul(tokens, nested.w_k), matmul(tokens, nested.w_v)


def nested_values(
    queries: torch.Tensor,
    binding: SubjectBinding,
    nested: NestedAttentionLayer,
    kv: Optional[KeyValues] = None,
) -> PerQueryValues:
    """
    Per-query subject values: row i = softmax(q_i K^T / sqrt(d)) V over nested keys/values.

    ``queries`` must be the external layer's Q. ``kv`` short-circuits the
    projection when nested keys/values were computed once per sampling run.
    """
    if binding.encoder_tokens.shape[0] == 0:
        raise ShapeError("nested attention needs at least one encoder token", operation="nested_values")
    nested_k, nested_v = kv if kv is not None else nested_keys_values(binding.encoder_tokens, nested)
    if queries.shape[1] != nested_k.shape[1]:
        raise ShapeError(
            f"queries {tuple(queries.shape)} do not match nested keys {tuple(nested_k.shape)}",
            shapes=[tuple(queries.shape), tuple(nested_k.shape)],
            operation="nested_values",
        )
    weights = softmax_rows(attention_logits(queries, nested_k, nested.d))
    return PerQueryValues(values=matmul(weights, nested_v), weights=weights)


def regularize_values(
    raw: PerQueryValues,
    v_star_norm: Union[float, torch.Tensor],
    alpha: Optional[float],
    layer_id: Optional[int] = None,
) -> PerQueryValues:
    """Hard-rescale every row to norm alpha * ||V[s*]||; ``alpha=None`` leaves rows as they are"""
    if alpha is None:
        return raw
    if alpha <= 0:
        raise ValidationError("alpha must be positive", field="alpha", value=alpha)
    values = rescale_rows(raw.values, alpha * v_star_norm, layer_id=layer_id)
    return PerQueryValues(values=values, weights=raw.weights)


def _subject_mask(length: int, subject_index: int) -> torch.Tensor:
    if not 0 <= subject_index < length:
        raise ValidationError(
            f"subject index {subject_index} is outside [0, {length})",
            field="subject_index",
            value=subject_index,
        )
    mask = torch.zeros(length, dtype=torch.bool)
    mask[subject_index] = True
    return mask


def apply_attention_factor(logits: torch.Tensor, subject_index: int, lam: float) -> torch.Tensor:
    """Subject column becomes max(x, lambda * x); applied to scaled logits before softmax"""
    if lam < 1:
        raise ValidationError("attention factor lambda must be >= 1", field="lambda", value=lam)
    mask = _subject_mask(logits.shape[1], subject_index)
    if lam == 1:
        return logits
    return torch.where(mask.unsqueeze(0), torch.maximum(logits, lam * logits), logits)


def substitute_values(bank: torch.Tensor, subject_index: int, vq: PerQueryValues) -> torch.Tensor:
    """Replace one token's column of an (n x T x d) value bank with per-query values"""
    n, length, d = bank.shape
    if vq.values.shape != (n, d):
        raise ShapeError(
            f"per-query values {tuple(vq.values.shape)} do not match bank {tuple(bank.shape)}",
            shapes=[tuple(vq.values.shape), tuple(bank.shape)],
            operation="substitute_values",
        )
    mask = _subject_mask(length, subject_index)
    return torch.where(mask.view(1, length, 1), vq.values.unsqueeze(1), bank)


def assemble_per_query_values(base_v: torch.Tensor, subject_index: int, vq: PerQueryValues) -> torch.Tensor:
    """
    Value bank V_q of shape (n x T x d): bank[i, s] = vq[i] if s is the subject
    token, else base_v[s] (bit-identical).
    """
    length, d = base_v.shape
    bank = base_v.unsqueeze(0).expand(vq.num_queries, length, d)
    return substitute_values(bank, subject_index, vq)


def attend_value_bank(weights: torch.Tensor, bank: torch.Tensor) -> torch.Tensor:
    """out[i] = sum_s weights[i, s] * bank[i, s]"""
    return torch.einsum("nt,ntd->nd", weights, bank)


def _factored_logits(q: torch.Tensor, k: torch.Tensor, d: int, bindings: Sequence[SubjectBinding]) -> torch.Tensor:
    logits = attention_logits(q, k, d)
    for binding in bindings:
        binding.check_prompt_length(k.shape[0])
        logits = apply_attention_factor(logits, binding.subject_token_index, binding.lam)
    return logits


def check_distinct_subjects(bindings: Sequence[SubjectBinding]) -> None:
    indices = [b.subject_token_index for b in bindings]
    if len(set(indices)) != len(indices):
        raise ValidationError("bindings must target distinct subject tokens", field="subject_token_index",
                              value=indices)


def nested_cross_attention_forward(
    features: torch.Tensor,
    text_emb: torch.Tensor,
    bindings: Sequence[SubjectBinding],
    ca: CrossAttentionLayer,
    nested_by_binding: Mapping[SubjectBinding, NestedAttentionLayer],
    capture: Optional[AttentionCapture] = None,
    kv_by_binding: Optional[Mapping[SubjectBinding, KeyValues]] = None,
) -> torch.Tensor:
    """Cross-attention where each bound token's value is replaced by its nested per-query values"""
    if not bindings:
        return cross_attention_forward(features, text_emb, ca)
    check_distinct_subjects(bindings)

    q, k, v = project_text(features, text_emb, ca)
    weights = softmax_rows(_factored_logits(q, k, ca.d, bindings))

    bank = v.unsqueeze(0).expand(q.shape[0], *v.shape)
    for binding in bindings:
        nested = nested_by_binding[binding]
        if nested.layer_id != ca.layer_id:
            raise ValidationError(
                f"nested layer {nested.layer_id} is paired with cross-attention layer {ca.layer_id}",
                field="layer_id",
                value=nested.layer_id,
            )
        kv = kv_by_binding.get(binding) if kv_by_binding else None
        raw = nested_values(q, binding, nested, kv=kv)
        v_star_norm = torch.linalg.vector_norm(v[binding.subject_token_index])
        vq = regularize_values(raw, v_star_norm, binding.alpha, layer_id=ca.layer_id)
        bank = substitute_values(bank, binding.subject_token_index, vq)
        if capture is not None:
            capture.record(
                layer_id=ca.layer_id,
                subject_index=binding.subject_token_index,
                external_weights=weights,
                values=vq.values,
                raw_values=raw.values,
                v_star_norm=v_star_norm,
                nested_weights=raw.weights,
            )
    return attend_value_bank(weights, bank)
