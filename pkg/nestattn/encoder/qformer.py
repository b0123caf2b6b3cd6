"""
Q-Former subject encoder

A fixed set of learned queries attends over the extractor's patch features
through L blocks (cross-attention from queries to features, then a two-layer
MLP, both residual). The output is always M tokens, independent of image size.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from ..attention.layers import NestedAttentionLayer, init_projection
from ..attention.nested import KeyValues, attention_logits, nested_keys_values
from ..core.exceptions import ShapeError, ValidationError
from ..core.tensor import RandomSource, matmul, softmax_rows
from .extractor import PatchFeatureExtractor, extract_features


class QFormerBlock(nn.Module):

    def __init__(self, d_enc: int, mlp_hidden: int, rng: RandomSource):
        super().__init__()
        self.d_enc = d_enc
        self.w_q = init_projection(rng.child(0), d_enc, d_enc)
        self.w_k = init_projection(rng.child(1), d_enc, d_enc)
        self.w_v = init_projection(rng.child(2), d_enc, d_enc)
        self.w_o = init_projection(rng.child(3), d_enc, d_enc)
        self.w_1 = init_projection(rng.child(4), d_enc, mlp_hidden)
        self.b_1 = nn.Parameter(torch.zeros(1, mlp_hidden, dtype=torch.float64))
        self.w_2 = init_projection(rng.child(5), mlp_hidden, d_enc)
        self.b_2 = nn.Parameter(torch.zeros(1, d_enc, dtype=torch.float64))

    def forward(self, states: torch.Tensor, features: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        q = matmul(states, self.w_q)
        k = matmul(features, self.w_k)
        v = matmul(features, self.w_v)
        weights = softmax_rows(attention_logits(q, k, self.d_enc))
        states = states + matmul(matmul(weights, v), self.w_o)
        hidden = F.gelu(matmul(states, self.w_1) + self.b_1)
        states = states + matmul(hidden, self.w_2) + self.b_2
        return states, weights


class QFormer(nn.Module):

    def __init__(self, num_queries: int, d_enc: int, blocks: int, mlp_hidden: int, rng: RandomSource,
                 query_init_std: float = 0.02):
        super().__init__()
        if num_queries < 1:
            raise ValidationError("Q-Former needs at least one learned query", field="num_queries", value=num_queries)
        self.num_queries = num_queries
        self.d_enc = d_enc
        self.learned_queries = nn.Parameter(rng.child(0).normal(num_queries, d_enc, std=query_init_std))
        self.blocks = nn.ModuleList(
            QFormerBlock(d_enc, mlp_hidden, rng.child(100 + i)) for i in range(blocks)
        )

    def run(self, features: torch.Tensor) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        """Token states and the final block's attention weights (None with no blocks)"""
        if features.dim() != 2 or features.shape[0] == 0:
            raise ShapeError("Q-Former needs at least one feature token", shapes=[tuple(features.shape)],
                             operation="qformer_forward")
        if features.shape[1] != self.d_enc:
            raise ShapeError(
                f"feature dim {features.shape[1]} does not match d_enc {self.d_enc}",
                shapes=[tuple(features.shape), tuple(self.learned_queries.shape)],
                operation="qformer_forward",
            )
        states = self.learned_queries
        weights = None
        for block in self.blocks:
            states, weights = block(states, features)
        return states, weights


@dataclass
class EncoderOutput:
    """Encoder tokens with the (source id, token range) each block came from"""

    tokens: torch.Tensor
    provenance: List[Tuple[str, Tuple[int, int]]] = field(default_factory=list)

    def __post_init__(self):
        total = sum(stop - start for _, (start, stop) in self.provenance)
        if self.provenance and total != self.tokens.shape[0]:
            raise ShapeError(
                f"provenance covers {total} tokens but {self.tokens.shape[0]} are present",
                shapes=[tuple(self.tokens.shape)],
                operation="EncoderOutput",
            )

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def d_enc(self) -> int:
        return self.tokens.shape[1]


def qformer_forward(features: torch.Tensor, qf: QFormer, source_id: str = "image-0") -> EncoderOutput:
    tokens, _ = qf.run(features)
    return EncoderOutput(tokens=tokens, provenance=[(source_id, (0, qf.num_queries))])


def project_nested_kv(enc: EncoderOutput, nested: NestedAttentionLayer) -> KeyValues:
    """K = tokens W_K, V = tokens W_V for one nested layer"""
    return nested_keys_values(enc.tokens, nested)


def concat_subject_tokens(parts: Sequence[EncoderOutput]) -> EncoderOutput:
    """Stack token sets in argument order (multiple views, or identity mixing)"""
    if not parts:
        raise ValidationError("cannot concatenate an empty list of encoder outputs", field="parts")
    dims = {p.d_enc for p in parts}
    if len(dims) != 1:
        raise ShapeError("encoder outputs disagree on d_enc", shapes=[tuple(p.tokens.shape) for p in parts],
                         operation="concat_subject_tokens")
    if len(parts) == 1:
        return parts[0]
    provenance = []
    offset = 0
    for part in parts:
        for source_id, (start, stop) in part.provenance or [(f"part-{len(provenance)}", (0, part.num_tokens))]:
            provenance.append((source_id, (offset + start, offset + stop)))
        offset += part.num_tokens
    return EncoderOutput(tokens=torch.cat([p.tokens for p in parts], dim=0), provenance=provenance)


def qformer_attention_maps(features: torch.Tensor, qf: QFormer, grid: Optional[Tuple[int, int]] = None) -> torch.Tensor:
    """Final-block attention of every learned query over the patch grid, shape (M, gh, gw)"""
    _, weights = qf.run(features)
    if weights is None:
        raise ValidationError("attention maps need a Q-Former with at least one block", field="blocks", value=0)
    patches = features.shape[0]
    if grid is None:
        side = int(round(patches ** 0.5))
        if side * side != patches:
            raise ShapeError("cannot infer a square patch grid", shapes=[tuple(features.shape)],
                             operation="qformer_attention_maps")
        grid = (side, side)
    return weights.reshape(qf.num_queries, grid[0], grid[1])


class SubjectEncoder(nn.Module):
    """Frozen extractor followed by the trainable Q-Former"""

    def __init__(self, extractor: PatchFeatureExtractor, qformer: QFormer):
        super().__init__()
        self.extractor = extractor
        self.qformer = qformer

    @property
    def num_queries(self) -> int:
        return self.qformer.num_queries

    def features(self, image: torch.Tensor) -> torch.Tensor:
        return extract_features(image, self.extractor)

    def encode(self, image: torch.Tensor, source_id: str = "image-0") -> EncoderOutput:
        return qformer_forward(self.features(image), self.qformer, source_id=source_id)

    def encode_many(self, images: Sequence[torch.Tensor], source_ids: Optional[Sequence[str]] = None) -> EncoderOutput:
        source_ids = source_ids or [f"image-{i}" for i in range(len(images))]
        return concat_subject_tokens([self.encode(img, sid) for img, sid in zip(images, source_ids)])

    def attention_maps(self, image: torch.Tensor) -> torch.Tensor:
        grid = self.extractor.grid
        return qformer_attention_maps(self.features(image), self.qformer, grid=(grid, grid))
