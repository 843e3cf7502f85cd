"""Gradient-check suite covering every trainable path of the model.

Each path builds a scalar loss and compares reverse-mode gradients against
central finite differences. At the default acceptance dimensions a full
coordinate sweep is wasteful, so coordinates are sampled per tensor
(seeded, so results are reproducible); unit tests run exhaustive sweeps at
small dimensions.
"""

from __future__ import annotations

import time

import numpy as np

from .alignment import FusionWeight, region_descriptors
from .autodiff import Tensor, gradient_check, mean_pool
from .composer import compose
from .features import LEVELS
from .model import ModelConfig, RetrievalModel
from .retrieval import QueryRecord, DatabaseEntry
from .trainer import contrastive_loss, _batch_similarity

DEFAULT_CHECK_DIMS = {"L": (8, 8, 16), "M": (4, 4, 32), "H": (2, 2, 64)}
DEFAULT_TEXT_DIM = 16


def run_gradient_suite(
    level_dims: dict | None = None,
    text_dim: int = DEFAULT_TEXT_DIM,
    region_count: int = 4,
    seed: int = 0,
    eps: float = 1e-5,
    max_coords_per_tensor: int | None = 32,
    tokens: int = 6,
) -> dict:
    """Max relative gradient error per trainable path, plus runtime.

    Returns a dict with one entry per path name and a ``_runtime_seconds``
    entry.
    """
    level_dims = dict(DEFAULT_CHECK_DIMS) if level_dims is None else dict(level_dims)
    rng = np.random.default_rng(seed)
    sample_rng = np.random.default_rng([seed, 0xC0DE])
    config = ModelConfig(level_dims=level_dims, text_dim=text_dim, region_count=region_count)
    model = RetrievalModel.initialize(config, seed=[seed, 1])
    weight = FusionWeight(0.6)

    started = time.perf_counter()
    results = {}

    for lvl in LEVELS:
        block = model.blocks[lvl]
        h, w, d = level_dims[lvl]
        x = Tensor(rng.normal(size=(h, w, d)), requires_grad=True)
        z = Tensor(rng.normal(size=(tokens, text_dim)), requires_grad=True)
        probe = rng.normal(size=d)

        def composer_loss(x=x, z=z, block=block, probe=probe, lvl=lvl):
            return (mean_pool(compose(x, z, block, level=lvl)) * probe).sum()

        params = [x, z] + [p for _, p in block.named_parameters()]
        results[f"composer/{lvl}"] = gradient_check(
            composer_loss, params, eps=eps,
            max_coords_per_tensor=max_coords_per_tensor, rng=sample_rng,
        )

        gen = model.mask_generators[lvl]
        xm = Tensor(rng.normal(size=(h, w, d)), requires_grad=True)
        probe_mat = rng.normal(size=(region_count, d))

        def mask_loss(xm=xm, gen=gen, probe_mat=probe_mat, lvl=lvl):
            return (region_descriptors(xm, gen, level=lvl) * probe_mat).sum()

        params = [xm] + [p for _, p in gen.named_parameters()]
        results[f"region_masks/{lvl}"] = gradient_check(
            mask_loss, params, eps=eps,
            max_coords_per_tensor=max_coords_per_tensor, rng=sample_rng,
        )

    # full chain: compose -> descriptors -> local+global -> fuse -> loss
    queries = []
    targets = []
    for i in range(2):
        feats = {lvl: rng.normal(size=level_dims[lvl]) for lvl in LEVELS}
        queries.append(
            QueryRecord(
                id=f"q{i}", label=f"c{i}", image_features=feats,
                text=rng.normal(size=(tokens, text_dim)),
            )
        )
        targets.append(
            DatabaseEntry(
                id=f"e{i}", label=f"c{i}",
                features={lvl: rng.normal(size=level_dims[lvl]) for lvl in LEVELS},
            )
        )

    def chain_loss():
        sims = _batch_similarity(model, queries, targets, weight)
        return contrastive_loss(sims, [0, 1], temperature=0.1)

    params = [p for _, p in model.named_parameters()]
    results["full_chain"] = gradient_check(
        chain_loss, params, eps=eps,
        max_coords_per_tensor=max_coords_per_tensor, rng=sample_rng,
    )

    results["_runtime_seconds"] = time.perf_counter() - started
    return results
