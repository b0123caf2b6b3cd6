"""
Mechanism dispatch for one host cross-attention layer
"""

from typing import Optional, Protocol, Sequence

import torch
from torch import nn

from ..attention.capture import AttentionCapture
from ..attention.layers import CrossAttentionLayer, SubjectBinding
from ..attention.nested import KeyValues, cross_attention_forward, nested_cross_attention_forward
from ..core.exceptions import ValidationError
from ..core.models import MechanismKind
from .mechanisms import decoupled_ca_forward, global_v_forward, multiple_tokens_forward, simple_adapter_forward


class Personalization(Protocol):
    """What a bound subject exposes to the host model"""

    mechanism: MechanismKind
    binding: SubjectBinding
    scale: float

    def layer_params(self, layer_id: int) -> nn.Module: ...

    def nested_kv(self, layer_id: int) -> KeyValues: ...

    def layer_values(self, layer_id: int) -> torch.Tensor: ...

    def projected_tokens(self) -> torch.Tensor: ...


def mechanism_cross_attention(
    features: torch.Tensor,
    text_emb: torch.Tensor,
    layer: CrossAttentionLayer,
    subjects: Sequence[Personalization],
    capture: Optional[AttentionCapture] = None,
) -> torch.Tensor:
    """
    Route one cross-attention layer through the subjects' mechanism.

    With no subjects this is plain cross-attention. Several subjects are only
    supported by nested attention, each with its own adapter.
    """
    if not subjects:
        return cross_attention_forward(features, text_emb, layer)
    kinds = {s.mechanism for s in subjects}
    if len(kinds) != 1:
        raise ValidationError("all subjects of one generation must use the same mechanism", field="mechanism",
                              value=sorted(k.value for k in kinds))
    mechanism = kinds.pop()
    for subject in subjects:
        subject.binding.check_prompt_length(text_emb.shape[0])

    if mechanism is MechanismKind.NESTED:
        bindings = [s.binding for s in subjects]
        return nested_cross_attention_forward(
            features,
            text_emb,
            bindings,
            layer,
            {s.binding: s.layer_params(layer.layer_id) for s in subjects},
            capture=capture,
            kv_by_binding={s.binding: s.nested_kv(layer.layer_id) for s in subjects},
        )

    if len(subjects) > 1:
        raise ValidationError(f"{mechanism.value} supports a single subject", field="subjects", value=len(subjects))
    subject = subjects[0]
    binding = subject.binding

    if mechanism is MechanismKind.DECOUPLED_CA:
        return decoupled_ca_forward(features, text_emb, binding.encoder_tokens, layer,
                                    subject.layer_params(layer.layer_id), scale=subject.scale)
    if mechanism is MechanismKind.SIMPLE_ADAPTER:
        return simple_adapter_forward(features, text_emb, subject.projected_tokens(), layer)
    if mechanism is MechanismKind.GLOBAL_V:
        return global_v_forward(features, text_emb, binding.encoder_tokens, layer,
                                subject.layer_params(layer.layer_id), binding.subject_token_index,
                                lam=binding.lam, capture=capture)
    return multiple_tokens_forward(features, text_emb, subject.layer_values(layer.layer_id), layer,
                                   binding.subject_token_index, lam=binding.lam)
