"""Joint global-local similarity between composed queries and targets.

Local alignment gates each feature map with k learned sigmoid masks,
mean-pools the gated maps into region descriptors, averages the k
descriptors and compares the two sides with cosine similarity per level.
Global alignment compares plain mean-pooled maps. The final score is the
convex combination of the two sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    as_tensor,
    cosine_similarity,
    matmul,
    mul,
    reshape,
    sigmoid,
    transpose_last,
)
from .errors import ConfigurationError, DimensionError
from .features import LEVELS

DEFAULT_REGION_COUNT = 4
DEFAULT_FUSION_WEIGHT = 0.6


@dataclass
class RegionMaskGenerator:
    """Per-level position-wise mask head: d features -> k sigmoid gates."""

    level: str
    weight: Tensor  # (d, k)
    bias: Tensor  # (k,)

    @property
    def k(self) -> int:
        return self.weight.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def initialize(
        cls,
        level: str,
        feature_dim: int,
        k: int = DEFAULT_REGION_COUNT,
        rng: np.random.Generator | None = None,
        init_scale: float = 0.02,
    ) -> "RegionMaskGenerator":
        if level not in LEVELS:
            raise ConfigurationError(f"unknown level {level!r}")
        if k < 1:
            raise ConfigurationError(f"region count must be positive, got {k}")
        rng = rng if rng is not None else np.random.default_rng(0)
        return cls(
            level=level,
            weight=Tensor(rng.normal(0.0, init_scale, size=(feature_dim, k)), requires_grad=True),
            bias=Tensor(np.zeros(k), requires_grad=True),
        )

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        return [(f"{prefix}weight", self.weight), (f"{prefix}bias", self.bias)]


def _check_level(x, gen: RegionMaskGenerator, level: str | None):
    if level is not None and level != gen.level:
        raise ConfigurationError(
            f"mask generator is for level {gen.level!r} but features are level {level!r}"
        )
    x = as_tensor(x)
    if x.data.ndim < 3:
        raise DimensionError(f"expected an (h, w, d) feature map, got shape {x.shape}")
    if x.shape[-1] != gen.feature_dim:
        raise DimensionError(
            f"feature dim {x.shape[-1]} does not match mask generator dim {gen.feature_dim}"
        )
    return x


def region_masks(x, gen: RegionMaskGenerator, level: str | None = None) -> Tensor:
    """Sigmoid attention masks, one per region: (..., h, w, k), values in (0, 1)."""
    x = _check_level(x, gen, level)
    *lead, h, w, d = x.shape
    flat = reshape(x, (*lead, h * w, d))
    logits = matmul(flat, gen.weight) + gen.bias
    return reshape(sigmoid(logits), (*lead, h, w, gen.k))


def region_descriptors(x, gen: RegionMaskGenerator, level: str | None = None) -> Tensor:
    """Mean-pool the mask-gated map into k region descriptors: (..., k, d).

    Descriptor j averages ``x * mask_j`` over all h*w positions (a positional
    mean, not a mask-normalized weighted mean).
    """
    x = _check_level(x, gen, level)
    *lead, h, w, d = x.shape
    flat = reshape(x, (*lead, h * w, d))
    masks = sigmoid(matmul(flat, gen.weight) + gen.bias)  # (..., h*w, k)
    return mul(matmul(transpose_last(masks), flat), 1.0 / (h * w))


@dataclass(frozen=True)
class FusionWeight:
    """Convex trade-off between local and global similarity."""

    beta: float = DEFAULT_FUSION_WEIGHT

    def __post_init__(self):
        if not (0.0 <= self.beta <= 1.0) or not np.isfinite(self.beta):
            raise ConfigurationError(f"fusion weight must lie in [0, 1], got {self.beta}")


def _check_per_level(q: dict, t: dict, what: str):
    if set(q) != set(LEVELS) or set(t) != set(LEVELS):
        raise ConfigurationError(f"{what} must cover exactly levels {LEVELS}")


def local_similarity(q_descriptors: dict, t_descriptors: dict):
    """Sum over levels of cosine between the k-averaged region descriptors.

    Inputs map level -> (..., k, d) descriptor sets; leading axes broadcast,
    so (B, 1, k, d) vs (1, C, k, d) yields a (B, C) score matrix.
    """
    _check_per_level(q_descriptors, t_descriptors, "region descriptor sets")
    total = None
    for lvl in LEVELS:
        q = as_tensor(q_descriptors[lvl])
        t = as_tensor(t_descriptors[lvl])
        if q.shape[-2:] != t.shape[-2:]:
            raise DimensionError(
                f"level {lvl} descriptor shapes differ: {q.shape[-2:]} vs {t.shape[-2:]}"
            )
        term = cosine_similarity(q.mean(axis=-2), t.mean(axis=-2))
        total = term if total is None else total + term
    return total


def global_similarity(q_features: dict, t_features: dict):
    """Sum over levels of cosine between position-averaged feature maps.

    Inputs map level -> (..., h, w, d); leading axes broadcast.
    """
    _check_per_level(q_features, t_features, "multi-level features")
    total = None
    for lvl in LEVELS:
        q = as_tensor(q_features[lvl])
        t = as_tensor(t_features[lvl])
        if q.shape[-3:] != t.shape[-3:]:
            raise DimensionError(
                f"level {lvl} map shapes differ: {q.shape[-3:]} vs {t.shape[-3:]}"
            )
        *q_lead, h, w, d = q.shape
        *t_lead, _, _, _ = t.shape
        q_pooled = reshape(q, (*q_lead, h * w, d)).mean(axis=-2)
        t_pooled = reshape(t, (*t_lead, h * w, d)).mean(axis=-2)
        term = cosine_similarity(q_pooled, t_pooled)
        total = term if total is None else total + term
    return total


def fuse(s_local, s_global, weight: FusionWeight):
    """Final score: beta * local + (1 - beta) * global."""
    beta = weight.beta
    if isinstance(s_local, Tensor) or isinstance(s_global, Tensor):
        return as_tensor(s_local) * beta + as_tensor(s_global) * (1.0 - beta)
    return beta * s_local + (1.0 - beta) * s_global
