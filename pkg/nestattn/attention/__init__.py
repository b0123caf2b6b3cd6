"""
Cross-attention, nested attention and attention capture
"""

from .capture import AttentionCapture, CaptureRecord
from .layers import CrossAttentionLayer, NestedAttentionLayer, PerQueryValues, SubjectBinding, init_projection
from .nested import (
    apply_attention_factor,
    assemble_per_query_values,
    attend_value_bank,
    attention_logits,
    check_distinct_subjects,
    cross_attention_forward,
    nested_cross_attention_forward,
    nested_keys_values,
    nested_values,
    project_text,
    regularize_values,
    substitute_values,
)

__all__ = [
    "AttentionCapture",
    "CaptureRecord",
    "CrossAttentionLayer",
    "NestedAttentionLayer",
    "PerQueryValues",
    "SubjectBinding",
    "init_projection",
    "apply_attention_factor",
    "assemble_per_query_values",
    "attend_value_bank",
    "attention_logits",
    "check_distinct_subjects",
    "cross_attention_forward",
    "nested_cross_attention_forward",
    "nested_keys_values",
    "nested_values",
    "project_text",
    "regularize_values",
    "substitute_values",
]
