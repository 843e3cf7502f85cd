"""Shared data model for multi-level feature maps and token embeddings.

A feature map is an (h, w, d) float64 array; an image carries one map per
level in ``LEVELS`` order. Query text arrives as an (n, d_T) token-embedding
matrix with n >= 1.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

LEVELS = ("L", "M", "H")

# level -> (h, w, d)
LevelDims = dict[str, tuple[int, int, int]]
# level -> (h, w, d) float64 array
MultiLevelFeatures = dict[str, np.ndarray]


def validate_level_dims(level_dims: LevelDims) -> None:
    if set(level_dims) != set(LEVELS):
        raise DimensionError(f"level dims must cover exactly {LEVELS}, got {sorted(level_dims)}")
    for level, dims in level_dims.items():
        if len(dims) != 3 or any(int(d) < 1 for d in dims):
            raise DimensionError(f"level {level} dims must be three positive ints, got {dims}")


def validate_features(features: MultiLevelFeatures, level_dims: LevelDims, owner: str = "") -> None:
    tag = f" for {owner!r}" if owner else ""
    if set(features) != set(LEVELS):
        raise DimensionError(f"features{tag} must cover exactly {LEVELS}, got {sorted(features)}")
    for level in LEVELS:
        expected = tuple(level_dims[level])
        got = np.asarray(features[level]).shape
        if got != expected:
            raise DimensionError(f"level {level} map{tag} has shape {got}, expected {expected}")


def validate_tokens(tokens: np.ndarray, text_dim: int, owner: str = "") -> None:
    tag = f" for {owner!r}" if owner else ""
    arr = np.asarray(tokens)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise DimensionError(f"token embeddings{tag} must be (n>=1, d_T), got shape {arr.shape}")
    if arr.shape[1] != text_dim:
        raise DimensionError(
            f"token embeddings{tag} have dim {arr.shape[1]}, expected {text_dim}"
        )
