"""Trainable model state: one composition block and one mask head per level."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import DEFAULT_REGION_COUNT, RegionMaskGenerator
from .autodiff import Tensor
from .composer import CrossModalBlock, compose_all
from .errors import ConfigurationError
from .features import LEVELS, validate_level_dims


@dataclass(frozen=True)
class ModelConfig:
    level_dims: dict
    text_dim: int
    region_count: int = DEFAULT_REGION_COUNT
    init_scale: float = 0.02

    def __post_init__(self):
        validate_level_dims({lvl: tuple(d) for lvl, d in self.level_dims.items()})
        if self.text_dim < 1:
            raise ConfigurationError(f"text_dim must be positive, got {self.text_dim}")
        if self.region_count < 1:
            raise ConfigurationError(f"region_count must be positive, got {self.region_count}")

    def feature_dim(self, level: str) -> int:
        return int(self.level_dims[level][2])

    def to_dict(self) -> dict:
        return {
            "level_dims": {lvl: list(map(int, self.level_dims[lvl])) for lvl in LEVELS},
            "text_dim": int(self.text_dim),
            "region_count": int(self.region_count),
            "init_scale": float(self.init_scale),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        return cls(
            level_dims={lvl: tuple(raw["level_dims"][lvl]) for lvl in LEVELS},
            text_dim=raw["text_dim"],
            region_count=raw["region_count"],
            init_scale=raw.get("init_scale", 0.02),
        )


class RetrievalModel:
    """All trainable parameters of the scoring function."""

    def __init__(self, config: ModelConfig, blocks: dict, mask_generators: dict):
        self.config = config
        self.blocks = blocks
        self.mask_generators = mask_generators

    @classmethod
    def initialize(cls, config: ModelConfig, seed) -> "RetrievalModel":
        rng = np.random.default_rng(seed)
        blocks = {
            lvl: CrossModalBlock.initialize(
                lvl, config.feature_dim(lvl), config.text_dim, rng, config.init_scale
            )
            for lvl in LEVELS
        }
        gens = {
            lvl: RegionMaskGenerator.initialize(
                lvl, config.feature_dim(lvl), config.region_count, rng, config.init_scale
            )
            for lvl in LEVELS
        }
        return cls(config, blocks, gens)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        params = []
        for lvl in LEVELS:
            params += self.blocks[lvl].named_parameters(prefix=f"composer/{lvl}/")
            params += self.mask_generators[lvl].named_parameters(prefix=f"alignment/{lvl}/")
        return params

    def compose_query(self, features, tokens) -> dict:
        return compose_all(features, tokens, self.blocks)

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        for name, p in self.named_parameters():
            if name not in state:
                raise ConfigurationError(f"missing parameter block {name!r}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ConfigurationError(
                    f"parameter {name!r} has shape {arr.shape}, expected {p.data.shape}"
                )
            p.data = arr.copy()
        extra = set(state) - {name for name, _ in self.named_parameters()}
        if extra:
            raise ConfigurationError(f"unknown parameter blocks: {sorted(extra)}")
