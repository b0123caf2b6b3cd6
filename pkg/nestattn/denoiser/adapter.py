"""
Trainable personalization modules

A ``SubjectAdapter`` is the encoder plus one mechanism module per host
cross-attention layer. Binding it to reference images and a prompt word gives
a ``PersonalizedSubject``, which the host model consumes at every layer.
Keys/values derived from the encoder tokens are step-independent, so a
subject computes them once and reuses them for every denoising step.
"""

from typing import Dict, List, Optional, Sequence

import torch
from torch import nn

from ..attention.layers import NestedAttentionLayer, SubjectBinding
from ..attention.nested import KeyValues
from ..baselines.mechanisms import DecoupledCAParams, TokenProjection, ValueProjection
from ..core.config import EncoderConfig, PersonalizationConfig
from ..core.exceptions import ValidationError
from ..core.models import MechanismKind
from ..core.tensor import RandomSource, matmul
from ..encoder.extractor import PatchFeatureExtractor
from ..encoder.qformer import EncoderOutput, QFormer, SubjectEncoder, project_nested_kv
from .model import ToyDenoiser
from .prompt import PromptEmbedding

# Stream ids under the encoder seed
_EXTRACTOR_STREAM = 0
_QFORMER_STREAM = 1
_LAYER_STREAM = 2

# Mechanisms whose inference knob is the attention factor on the subject column
FACTOR_MECHANISMS = (MechanismKind.NESTED, MechanismKind.GLOBAL_V, MechanismKind.MULTIPLE_TOKENS)


def knob_arguments(mechanism: MechanismKind, value: float) -> Dict[str, float]:
    """Map a sweep value to ``bind`` arguments: attention factor, decoupled scale, or nothing"""
    if mechanism in FACTOR_MECHANISMS:
        return {"lam": value}
    if mechanism is MechanismKind.DECOUPLED_CA:
        return {"scale": value}
    return {}


def build_encoder(config: EncoderConfig, image_size: int) -> SubjectEncoder:
    rng = RandomSource(config.seed)
    extractor = PatchFeatureExtractor(image_size, config.patch_size, config.d_enc, rng.child(_EXTRACTOR_STREAM))
    qformer = QFormer(config.num_queries, config.d_enc, config.blocks, config.mlp_hidden,
                      rng.child(_QFORMER_STREAM), query_init_std=config.query_init_std)
    return SubjectEncoder(extractor, qformer)


class SubjectAdapter(nn.Module):
    """Encoder and per-layer mechanism parameters for one mechanism"""

    def __init__(self, mechanism: MechanismKind, encoder: SubjectEncoder, layers: Dict[int, nn.Module],
                 token_projection: Optional[TokenProjection] = None):
        super().__init__()
        self.mechanism = MechanismKind(mechanism)
        self.encoder = encoder
        self.layers = nn.ModuleDict({str(k): v for k, v in sorted(layers.items())})
        self.token_projection = token_projection
        if self.mechanism is MechanismKind.SIMPLE_ADAPTER and token_projection is None:
            raise ValidationError("simple adapter needs a token projection", field="token_projection")

    @classmethod
    def build(cls, mechanism: MechanismKind, host: ToyDenoiser, encoder_config: EncoderConfig,
              personalization: Optional[PersonalizationConfig] = None) -> "SubjectAdapter":
        """One mechanism module per host cross-attention layer"""
        mechanism = MechanismKind(mechanism)
        personalization = personalization or PersonalizationConfig(mechanism=mechanism)
        encoder = build_encoder(encoder_config, host.image_size)
        rng = RandomSource(encoder_config.seed).child(_LAYER_STREAM)
        d_enc = encoder_config.d_enc
        layers: Dict[int, nn.Module] = {}
        for ca in host.cross_attention_layers:
            layer_rng = rng.child(ca.layer_id)
            if mechanism is MechanismKind.NESTED:
                layers[ca.layer_id] = NestedAttentionLayer(ca.layer_id, d_enc, ca.d, layer_rng)
            elif mechanism is MechanismKind.DECOUPLED_CA:
                layers[ca.layer_id] = DecoupledCAParams(ca.layer_id, d_enc, ca.d, layer_rng,
                                                        init_std=personalization.decoupled_init_std)
            elif mechanism in (MechanismKind.GLOBAL_V, MechanismKind.MULTIPLE_TOKENS):
                layers[ca.layer_id] = ValueProjection(ca.layer_id, d_enc, ca.d, layer_rng)
        token_projection = None
        if mechanism is MechanismKind.SIMPLE_ADAPTER:
            token_projection = TokenProjection(d_enc, host.config.text_dim, rng.child(1000))
        adapter = cls(mechanism, encoder, layers, token_projection)
        adapter.check_host(host)
        return adapter

    def check_host(self, host: ToyDenoiser) -> None:
        if self.mechanism is MechanismKind.SIMPLE_ADAPTER:
            return
        expected = sorted(ca.layer_id for ca in host.cross_attention_layers)
        present = sorted(int(k) for k in self.layers.keys())
        if expected != present:
            raise ValidationError("adapter needs exactly one module per host cross-attention layer",
                                  field="layers", value={"host": expected, "adapter": present})

    def layer_params(self, layer_id: int) -> nn.Module:
        key = str(layer_id)
        if key not in self.layers:
            raise ValidationError(f"no {self.mechanism.value} module for layer {layer_id}", field="layer_id",
                                  value=layer_id)
        return self.layers[key]

    def trainable_parameters(self) -> List[nn.Parameter]:
        """Everything except the frozen extractor (whose tensors are buffers)"""
        return [p for p in self.parameters() if p.requires_grad]

    def encode(self, images: Sequence[torch.Tensor], source_ids: Optional[Sequence[str]] = None) -> EncoderOutput:
        """Tokens of one or more reference images, concatenated in order"""
        if not images:
            raise ValidationError("at least one reference image is required", field="images")
        return self.encoder.encode_many(list(images), source_ids)

    def bind(self, prompt: PromptEmbedding, tokens: EncoderOutput, lam: float = 1.0, alpha: Optional[float] = 2.0,
             scale: float = 1.0, subject_index: Optional[int] = None) -> "PersonalizedSubject":
        index = prompt.subject_word_index if subject_index is None else subject_index
        binding = SubjectBinding(
            subject_token_index=index,
            encoder_tokens=tokens.tokens,
            lam=lam if self.mechanism in FACTOR_MECHANISMS else 1.0,
            alpha=alpha if self.mechanism is MechanismKind.NESTED else None,
        )
        binding.check_prompt_length(prompt.length)
        return PersonalizedSubject(binding=binding, adapter=self, scale=scale)


class PersonalizedSubject:
    """A binding together with the adapter that produced its tokens"""

    def __init__(self, binding: SubjectBinding, adapter: SubjectAdapter, scale: float = 1.0):
        if scale < 0:
            raise ValidationError("decoupled scale must be non-negative", field="scale", value=scale)
        self.binding = binding
        self.adapter = adapter
        self.scale = scale
        self._kv: Dict[int, KeyValues] = {}
        self._values: Dict[int, torch.Tensor] = {}
        self._projected: Optional[torch.Tensor] = None

    @property
    def mechanism(self) -> MechanismKind:
        return self.adapter.mechanism

    @property
    def num_tokens(self) -> int:
        return self.binding.encoder_tokens.shape[0]

    def layer_params(self, layer_id: int) -> nn.Module:
        return self.adapter.layer_params(layer_id)

    def nested_kv(self, layer_id: int) -> KeyValues:
        if layer_id not in self._kv:
            self._kv[layer_id] = project_nested_kv(EncoderOutput(self.binding.encoder_tokens),
                                                   self.layer_params(layer_id))
        return self._kv[layer_id]

    def layer_values(self, layer_id: int) -> torch.Tensor:
        """Per-token projected values (multiple tokens)"""
        if layer_id not in self._values:
            self._values[layer_id] = matmul(self.binding.encoder_tokens, self.layer_params(layer_id).w_v)
        return self._values[layer_id]

    def projected_tokens(self) -> torch.Tensor:
        """Encoder tokens mapped to the text width (simple adapter)"""
        if self._projected is None:
            self._projected = self.adapter.token_projection(self.binding.encoder_tokens)
        return self._projected
