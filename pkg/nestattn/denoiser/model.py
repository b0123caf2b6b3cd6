"""
Toy text-conditioned denoiser

Pixels are cut into patches and embedded as n feature tokens. Each block
applies self-attention, cross-attention to the prompt, and an MLP, all
pre-normalized and residual. Every cross-attention layer is routed through
the mechanism dispatcher, so a bound subject can personalize it; with no
subjects the dispatcher falls through to plain cross-attention.
"""

import math
from typing import Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from ..attention.capture import AttentionCapture
from ..attention.layers import CrossAttentionLayer, init_projection
from ..attention.nested import attention_logits
from ..baselines.dispatch import Personalization, mechanism_cross_attention
from ..core.config import ModelConfig
from ..core.exceptions import ShapeError, ValidationError
from ..core.tensor import DTYPE, RandomSource, matmul, patchify, softmax_rows, unpatchify
from .prompt import PromptEmbedding


def timestep_embedding(t: int, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of one step, shape (1, dim)"""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=DTYPE) / max(half, 1))
    angles = float(t) * freqs
    embedding = torch.cat([torch.sin(angles), torch.cos(angles)])
    if dim % 2:
        embedding = torch.cat([embedding, torch.zeros(1, dtype=DTYPE)])
    return embedding.unsqueeze(0)


class SelfAttention(nn.Module):

    def __init__(self, d_model: int, d_attn: int, rng: RandomSource):
        super().__init__()
        self.d = d_attn
        self.w_q = init_projection(rng.child(0), d_model, d_attn)
        self.w_k = init_projection(rng.child(1), d_model, d_attn)
        self.w_v = init_projection(rng.child(2), d_model, d_attn)
        self.w_o = init_projection(rng.child(3), d_attn, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        q = matmul(x, self.w_q)
        k = matmul(x, self.w_k)
        weights = softmax_rows(attention_logits(q, k, self.d))
        return matmul(matmul(weights, matmul(x, self.w_v)), self.w_o)


class DenoiserBlock(nn.Module):

    def __init__(self, layer_id: int, config: ModelConfig, rng: RandomSource):
        super().__init__()
        d_model = config.d_model
        self.norm_self = nn.LayerNorm(d_model, dtype=DTYPE)
        self.self_attention = SelfAttention(d_model, config.d_attn, rng.child(0))
        self.norm_cross = nn.LayerNorm(d_model, dtype=DTYPE)
        self.cross_attention = CrossAttentionLayer(layer_id, d_model, config.text_dim, config.d_attn, rng.child(1))
        self.w_cross_out = init_projection(rng.child(2), config.d_attn, d_model)
        self.norm_mlp = nn.LayerNorm(d_model, dtype=DTYPE)
        self.w_1 = init_projection(rng.child(3), d_model, config.mlp_hidden)
        self.b_1 = nn.Parameter(torch.zeros(1, config.mlp_hidden, dtype=DTYPE))
        self.w_2 = init_projection(rng.child(4), config.mlp_hidden, d_model)
        self.b_2 = nn.Parameter(torch.zeros(1, d_model, dtype=DTYPE))

    def forward(self, h: torch.Tensor, text_emb: torch.Tensor, subjects: Sequence[Personalization],
                capture: Optional[AttentionCapture] = None) -> torch.Tensor:
        h = h + self.self_attention(self.norm_self(h))
        attended = mechanism_cross_attention(self.norm_cross(h), text_emb, self.cross_attention, subjects, capture)
        h = h + matmul(attended, self.w_cross_out)
        hidden = F.gelu(matmul(self.norm_mlp(h), self.w_1) + self.b_1)
        return h + matmul(hidden, self.w_2) + self.b_2


class CaptureHandle:
    """Returned by ``register_capture_hook``; ``remove()`` detaches the sink"""

    def __init__(self, model: "ToyDenoiser", capture: AttentionCapture):
        self._model = model
        self.capture = capture

    def remove(self) -> None:
        if self._model._capture is self.capture:
            self._model._capture = None


class ToyDenoiser(nn.Module):
    """Predicts the noise in an (H, W, 3) image given a step and a prompt"""

    def __init__(self, config: ModelConfig, image_size: int, vocab_size: int, rng: RandomSource):
        super().__init__()
        if image_size % config.patch_size:
            raise ShapeError(
                f"image size {image_size} is not divisible by patch size {config.patch_size}",
                shapes=[(image_size, image_size)],
                operation="ToyDenoiser",
            )
        self.config = config
        self.image_size = image_size
        self.patch_size = config.patch_size
        patch_pixels = config.patch_size * config.patch_size * 3
        tokens = (image_size // config.patch_size) ** 2

        self.w_in = init_projection(rng.child(0), patch_pixels, config.d_model)
        self.b_in = nn.Parameter(torch.zeros(1, config.d_model, dtype=DTYPE))
        self.positional = nn.Parameter(rng.child(1).normal(tokens, config.d_model, std=0.02))
        self.token_embedding = nn.Parameter(rng.child(2).normal(vocab_size, config.text_dim, std=1.0))
        self.w_time = init_projection(rng.child(3), config.d_model, config.d_model)
        self.blocks = nn.ModuleList(
            DenoiserBlock(i, config, rng.child(100 + i)) for i in range(config.blocks)
        )
        self.norm_out = nn.LayerNorm(config.d_model, dtype=DTYPE)
        # small, so an untrained model predicts near-zero noise
        self.w_out = init_projection(rng.child(4), config.d_model, patch_pixels, std=0.02)
        self.b_out = nn.Parameter(torch.zeros(1, patch_pixels, dtype=DTYPE))
        self._capture: Optional[AttentionCapture] = None

    @property
    def cross_attention_layers(self):
        return [block.cross_attention for block in self.blocks]

    @property
    def num_tokens(self) -> int:
        return self.positional.shape[0]

    def register_capture_hook(self, capture: AttentionCapture) -> CaptureHandle:
        self._capture = capture
        return CaptureHandle(self, capture)

    @property
    def registered_capture(self) -> Optional[AttentionCapture]:
        return self._capture

    def embed_prompt(self, prompt: PromptEmbedding) -> torch.Tensor:
        ids = torch.tensor(prompt.token_ids, dtype=torch.long)
        if int(ids.max()) >= self.token_embedding.shape[0]:
            raise ValidationError("prompt token id outside the embedding table", field="token_ids",
                                  value=list(prompt.token_ids))
        return self.token_embedding[ids]

    def forward(self, x_t: torch.Tensor, t: int, prompt: PromptEmbedding,
                subjects: Sequence[Personalization] = (), capture: Optional[AttentionCapture] = None) -> torch.Tensor:
        if x_t.shape != (self.image_size, self.image_size, 3):
            raise ShapeError(f"model expects {self.image_size}x{self.image_size}x3 images",
                             shapes=[tuple(x_t.shape)], operation="denoiser_forward")
        capture = capture if capture is not None else self._capture
        text_emb = self.embed_prompt(prompt)
        h = (matmul(patchify(x_t, self.patch_size), self.w_in) + self.b_in + self.positional
             + matmul(timestep_embedding(t, self.config.d_model), self.w_time))
        for block in self.blocks:
            h = block(h, text_emb, subjects, capture)
        out = matmul(self.norm_out(h), self.w_out) + self.b_out
        return unpatchify(out, self.patch_size, self.image_size, self.image_size, 3)


def denoiser_forward(x_t: torch.Tensor, t: int, prompt: PromptEmbedding, subjects: Sequence[Personalization],
                     model: ToyDenoiser, capture: Optional[AttentionCapture] = None) -> torch.Tensor:
    """Predicted noise; every cross-attention layer sees the same subjects"""
    return model(x_t, t, prompt, subjects, capture)
