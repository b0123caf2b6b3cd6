"""
Subject encoder: frozen feature extractor plus Q-Former
"""

from .analysis import dominant_tokens, patch_mask, query_mask, trace_dominant_tokens
from .extractor import PatchFeatureExtractor, extract_features
from .qformer import (
    EncoderOutput,
    QFormer,
    QFormerBlock,
    SubjectEncoder,
    concat_subject_tokens,
    project_nested_kv,
    qformer_attention_maps,
    qformer_forward,
)

__all__ = [
    "PatchFeatureExtractor",
    "extract_features",
    "EncoderOutput",
    "QFormer",
    "QFormerBlock",
    "SubjectEncoder",
    "concat_subject_tokens",
    "project_nested_kv",
    "qformer_attention_maps",
    "qformer_forward",
    "dominant_tokens",
    "patch_mask",
    "query_mask",
    "trace_dominant_tokens",
]
