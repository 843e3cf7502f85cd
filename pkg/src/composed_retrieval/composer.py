"""Cross-modal composition of query visual features with text tokens.

One block per feature level: project the tokens into the level's visual
space, let every spatial position cross-attend to them (pre-norm, residual),
then apply a position-wise feed-forward refinement (pre-norm, residual).
Spatial shape is preserved, so composed queries live in the same space as
target feature maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    as_tensor,
    gelu,
    layer_norm,
    matmul,
    reshape,
    scaled_dot_attention,
)
from .errors import ConfigurationError, DimensionError
from .features import LEVELS

FFN_MULTIPLIER = 4


@dataclass
class CrossModalBlock:
    """Parameters of one per-level composition block."""

    level: str
    text_proj_w: Tensor
    text_proj_b: Tensor
    query_w: Tensor
    query_b: Tensor
    key_w: Tensor
    key_b: Tensor
    value_w: Tensor
    value_b: Tensor
    out_w: Tensor
    out_b: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    norm_attn_gain: Tensor
    norm_attn_bias: Tensor
    norm_ffn_gain: Tensor
    norm_ffn_bias: Tensor

    @property
    def feature_dim(self) -> int:
        return self.query_w.shape[0]

    @property
    def text_dim(self) -> int:
        return self.text_proj_w.shape[0]

    @classmethod
    def initialize(
        cls,
        level: str,
        feature_dim: int,
        text_dim: int,
        rng: np.random.Generator,
        init_scale: float = 0.02,
    ) -> "CrossModalBlock":
        if level not in LEVELS:
            raise ConfigurationError(f"unknown level {level!r}")

        def weight(*shape):
            return Tensor(rng.normal(0.0, init_scale, size=shape), requires_grad=True)

        def zeros(*shape):
            return Tensor(np.zeros(shape), requires_grad=True)

        def ones(*shape):
            return Tensor(np.ones(shape), requires_grad=True)

        d, dt, dh = feature_dim, text_dim, FFN_MULTIPLIER * feature_dim
        return cls(
            level=level,
            text_proj_w=weight(dt, d),
            text_proj_b=zeros(d),
            query_w=weight(d, d),
            query_b=zeros(d),
            key_w=weight(d, d),
            key_b=zeros(d),
            value_w=weight(d, d),
            value_b=zeros(d),
            out_w=weight(d, d),
            out_b=zeros(d),
            ffn_w1=weight(d, dh),
            ffn_b1=zeros(dh),
            ffn_w2=weight(dh, d),
            ffn_b2=zeros(d),
            norm_attn_gain=ones(d),
            norm_attn_bias=zeros(d),
            norm_ffn_gain=ones(d),
            norm_ffn_bias=zeros(d),
        )

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        names = (
            "text_proj_w", "text_proj_b",
            "query_w", "query_b", "key_w", "key_b", "value_w", "value_b",
            "out_w", "out_b",
            "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2",
            "norm_attn_gain", "norm_attn_bias", "norm_ffn_gain", "norm_ffn_bias",
        )
        return [(f"{prefix}{name}", getattr(self, name)) for name in names]


def compose(x_q, tokens, block: CrossModalBlock, level: str | None = None) -> Tensor:
    """Inject token embeddings into one level's visual features.

    ``x_q`` is an (h, w, d) map (leading batch axes allowed), ``tokens`` an
    (n, d_T) matrix (matching batch axes allowed). Returns a map of the same
    spatial shape, differentiable w.r.t. both inputs and all block parameters.
    """
    if level is not None and level != block.level:
        raise ConfigurationError(
            f"block is for level {block.level!r} but features are level {level!r}"
        )
    x_q = as_tensor(x_q)
    tokens = as_tensor(tokens)
    if x_q.data.ndim < 3:
        raise DimensionError(f"expected an (h, w, d) feature map, got shape {x_q.shape}")
    *lead, h, w, d = x_q.shape
    if d != block.feature_dim:
        raise DimensionError(
            f"feature dim {d} does not match block dim {block.feature_dim}"
        )
    if tokens.data.ndim < 2 or tokens.shape[-1] != block.text_dim:
        raise DimensionError(
            f"token dim {tokens.shape[-1:]} does not match projection input {block.text_dim}"
        )

    positions = reshape(x_q, (*lead, h * w, d))
    projected = matmul(tokens, block.text_proj_w) + block.text_proj_b

    normed = layer_norm(positions, block.norm_attn_gain, block.norm_attn_bias)
    q = matmul(normed, block.query_w) + block.query_b
    k = matmul(projected, block.key_w) + block.key_b
    v = matmul(projected, block.value_w) + block.value_b
    attended = matmul(scaled_dot_attention(q, k, v), block.out_w) + block.out_b
    positions = positions + attended

    normed = layer_norm(positions, block.norm_ffn_gain, block.norm_ffn_bias)
    hidden = gelu(matmul(normed, block.ffn_w1) + block.ffn_b1)
    positions = positions + (matmul(hidden, block.ffn_w2) + block.ffn_b2)

    return reshape(positions, (*lead, h, w, d))


def compose_all(features, tokens, blocks: dict[str, CrossModalBlock]) -> dict[str, Tensor]:
    """Apply ``compose`` independently at every level."""
    missing = [lvl for lvl in LEVELS if lvl not in blocks]
    if missing or set(blocks) != set(LEVELS):
        raise ConfigurationError(
            f"blocks must cover exactly {LEVELS}, got {sorted(blocks)}"
        )
    if set(features) != set(LEVELS):
        raise ConfigurationError(
            f"features must cover exactly {LEVELS}, got {sorted(features)}"
        )
    return {lvl: compose(features[lvl], tokens, blocks[lvl], level=lvl) for lvl in LEVELS}
