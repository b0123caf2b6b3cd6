"""
Baseline subject-injection mechanisms and the per-layer dispatcher
"""

from .dispatch import Personalization, mechanism_cross_attention
from .mechanisms import (
    DecoupledCAParams,
    TokenProjection,
    ValueProjection,
    decoupled_ca_forward,
    global_v_forward,
    multiple_tokens_forward,
    simple_adapter_forward,
)

__all__ = [
    "Personalization",
    "mechanism_cross_attention",
    "DecoupledCAParams",
    "TokenProjection",
    "ValueProjection",
    "decoupled_ca_forward",
    "global_v_forward",
    "multiple_tokens_forward",
    "simple_adapter_forward",
]
