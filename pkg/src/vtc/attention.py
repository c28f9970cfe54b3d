"""Cluster attention and text-conditioned frame fusion.

The cluster attention runs three multi-head blocks: a query builder that
injects the noise-scorer features into the frame stream, a key builder that
injects them into the neighborhood stream, and a final block that attends
over the neighborhood rows. Each block is followed by layer norm. The final
T'-row output is mean-pooled into the single cleaned text embedding.

Fusion is one attention block with the text embedding as the sole query over
the frame rows, producing the text-conditioned video embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    AttentionWeights, DegenerateInputError, Matrix, Parameter,
    init_attention_weights, layer_norm, mean_rows, multi_head_attention,
)


@dataclass
class AttentionBlock:
    attn: AttentionWeights
    ln_gain: Parameter
    ln_bias: Parameter

    def parameters(self) -> list[Parameter]:
        return self.attn.parameters() + [self.ln_gain, self.ln_bias]

    def __call__(self, q: Matrix, k: Matrix, v: Matrix,
                 collect_scores: list | None = None) -> Matrix:
        out = multi_head_attention(q, k, v, self.attn, collect_scores=collect_scores)
        return layer_norm(out, self.ln_gain, self.ln_bias)


def _block(q_dim: int, kv_dim: int, width: int, heads: int, name: str,
           rng: np.random.Generator) -> AttentionBlock:
    return AttentionBlock(
        attn=init_attention_weights(q_dim, kv_dim, width, width, heads, name, rng),
        ln_gain=Parameter(np.ones((1, width)), f"{name}.ln_g"),
        ln_bias=Parameter(np.zeros((1, width)), f"{name}.ln_b"))


@dataclass
class VtcAttWeights:
    """The three cluster-attention blocks; all attend at the embedding width."""
    query_block: AttentionBlock   # queries: frames (o), keys/values: scorer features (d)
    key_block: AttentionBlock     # queries: neighborhood (o), keys/values: scorer features (d)
    final_block: AttentionBlock   # queries/keys: block outputs (o), values: neighborhood (o)

    @classmethod
    def create(cls, embed_dim: int, sweeper_dim: int, heads: int,
               rng: np.random.Generator) -> "VtcAttWeights":
        return cls(
            query_block=_block(embed_dim, sweeper_dim, embed_dim, heads, "vtc_att.query", rng),
            key_block=_block(embed_dim, sweeper_dim, embed_dim, heads, "vtc_att.key", rng),
            final_block=_block(embed_dim, embed_dim, embed_dim, heads, "vtc_att.final", rng))

    def parameters(self) -> list[Parameter]:
        return (self.query_block.parameters() + self.key_block.parameters()
                + self.final_block.parameters())


def vtc_att(frames: Matrix, neighborhood: Matrix, h: Matrix,
            weights: VtcAttWeights) -> Matrix:
    """Cleaned cluster embedding from frames, neighborhood rows, and scorer features.

    frames: (T', o); neighborhood: (K+1, o) with the anchor embedding first;
    h: (K+1, d). Returns a single o-wide row (mean over the T' query rows).
    """
    _check_inputs(frames, neighborhood, h)
    q = weights.query_block(frames, h, h)
    k = weights.key_block(neighborhood, h, h)
    cleaned = weights.final_block(q, k, neighborhood)
    return mean_rows(cleaned)


def attention_scores(frames: Matrix, neighborhood: Matrix, h: Matrix,
                     weights: VtcAttWeights) -> np.ndarray:
    """Head-averaged final-block attention, one row per frame, one column per
    neighborhood row (anchor first). Rows sum to 1."""
    _check_inputs(frames, neighborhood, h)
    q = weights.query_block(frames, h, h)
    k = weights.key_block(neighborhood, h, h)
    per_head: list[Matrix] = []
    weights.final_block(q, k, neighborhood, collect_scores=per_head)
    return np.mean([m.data for m in per_head], axis=0)


def _check_inputs(frames: Matrix, neighborhood: Matrix, h: Matrix) -> None:
    if frames.rows < 1:
        raise DegenerateInputError("cluster attention needs at least one frame row")
    if neighborhood.rows < 1:
        raise DegenerateInputError("cluster attention needs at least the anchor row")
    if neighborhood.rows != h.rows:
        raise DegenerateInputError(
            f"neighborhood has {neighborhood.rows} rows but scorer features have {h.rows}")


@dataclass
class FusionWeights:
    block: AttentionBlock

    @classmethod
    def create(cls, embed_dim: int, heads: int, rng: np.random.Generator) -> "FusionWeights":
        return cls(block=_block(embed_dim, embed_dim, embed_dim, heads, "fusion", rng))

    def parameters(self) -> list[Parameter]:
        return self.block.parameters()


def fuse(text: Matrix, frames: Matrix, weights: FusionWeights) -> Matrix:
    """Text-conditioned video embedding: one query row attending over frames."""
    if frames.rows < 1:
        raise DegenerateInputError("fusion needs at least one frame row")
    if text.rows != 1:
        raise DegenerateInputError(f"fusion query must be a single row, got {text.rows}")
    return weights.block(text, frames, frames)
