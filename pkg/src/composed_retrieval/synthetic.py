"""Synthetic feature-bundle generators for desk-scale experiments.

``generate_synthetic`` draws one unit prototype per class and level (a unit
channel direction broadcast over positions, so each prototype map has unit
Frobenius norm) plus a unit text prototype, then perturbs every item with
element-wise Gaussian noise. ``generate_local_cue_bundle`` hides the class
signal in one spatial quadrant while forcing identical position-averaged
statistics across classes, so only region-level matching can separate them.
"""

from __future__ import annotations

import numpy as np

from .bundle import FeatureBundle
from .errors import ConfigurationError
from .features import LEVELS
from .retrieval import DatabaseEntry, QueryRecord

DEFAULT_LEVEL_DIMS = {"L": (8, 8, 16), "M": (4, 4, 32), "H": (2, 2, 64)}
DEFAULT_TEXT_DIM = 16


def _unit_vector(rng, dim):
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def generate_synthetic(
    seed,
    classes: int = 3,
    entries_per_class: int = 60,
    queries_per_class: int = 15,
    level_dims: dict | None = None,
    text_dim: int = DEFAULT_TEXT_DIM,
    noise: float = 0.25,
    tokens_per_query: int = 8,
    class_names: list | None = None,
    prototype_uniformity: float = 0.4,
) -> FeatureBundle:
    """Class-prototype bundle: each item is its class prototype plus noise.

    ``prototype_uniformity`` splits each unit prototype's energy between a
    spatially uniform channel direction (which survives mean pooling) and a
    spatially varying pattern (which pooling averages away); lower values
    leave more of the class signal to be recovered by learned composition
    and region masks rather than by plain pooled cosine.
    """
    if classes < 2:
        raise ConfigurationError(f"need at least 2 classes, got {classes}")
    if noise < 0:
        raise ConfigurationError(f"noise must be nonnegative, got {noise}")
    if entries_per_class < 1 or queries_per_class < 1 or tokens_per_query < 1:
        raise ConfigurationError("per-class counts and token count must be positive")
    if not (0.0 < prototype_uniformity <= 1.0):
        raise ConfigurationError(
            f"prototype_uniformity must lie in (0, 1], got {prototype_uniformity}"
        )
    level_dims = dict(DEFAULT_LEVEL_DIMS) if level_dims is None else dict(level_dims)
    if class_names is None:
        class_names = [f"class{i}" for i in range(classes)]
    if len(class_names) != classes:
        raise ConfigurationError("class_names length must equal the class count")

    rng = np.random.default_rng(seed)
    entries = []
    queries = []
    for class_index, label in enumerate(class_names):
        proto_maps = {}
        for lvl in LEVELS:
            h, w, d = level_dims[lvl]
            uniform = np.broadcast_to(_unit_vector(rng, d) / np.sqrt(h * w), (h, w, d))
            pattern = rng.normal(size=(h, w, d))
            pattern /= np.linalg.norm(pattern)
            mix = prototype_uniformity * uniform + np.sqrt(
                1.0 - prototype_uniformity**2
            ) * pattern
            proto_maps[lvl] = mix / np.linalg.norm(mix)
        text_proto = _unit_vector(rng, text_dim)

        for i in range(entries_per_class):
            features = {
                lvl: proto_maps[lvl] + rng.normal(0.0, noise, size=level_dims[lvl])
                for lvl in LEVELS
            }
            entries.append(
                DatabaseEntry(
                    id=f"e{class_index:02d}{i:04d}", label=label, features=features
                )
            )
        for i in range(queries_per_class):
            features = {
                lvl: proto_maps[lvl] + rng.normal(0.0, noise, size=level_dims[lvl])
                for lvl in LEVELS
            }
            text = text_proto + rng.normal(0.0, noise, size=(tokens_per_query, text_dim))
            queries.append(
                QueryRecord(
                    id=f"q{class_index:02d}{i:04d}",
                    label=label,
                    image_features=features,
                    text=text,
                )
            )

    bundle = FeatureBundle(
        level_dims=level_dims,
        text_dim=text_dim,
        class_names=list(class_names),
        entries=entries,
        queries=queries,
        provenance=f"synthetic seed={seed} noise={noise}",
    )
    bundle.validate()
    return bundle


def generate_local_cue_bundle(
    seed,
    classes: int = 3,
    entries_per_class: int = 20,
    queries_per_class: int = 6,
    level_dims: dict | None = None,
    text_dim: int = DEFAULT_TEXT_DIM,
    noise: float = 0.05,
    cue_strength: float = 1.0,
    tokens_per_query: int = 8,
    class_names: list | None = None,
) -> FeatureBundle:
    """Bundle whose class signal lives only in the top-left spatial quadrant.

    Per class and level, a class direction is added inside the quadrant and
    subtracted (area-weighted) outside it, so the position-averaged map is
    identical for every class. Element noise is centered across positions,
    keeping every item's position-averaged features exactly equal to the
    shared base: pooled cosine carries no class or item information at all,
    and only region-level matching can separate classes. Text prototypes
    stay class-specific.
    """
    if classes < 2:
        raise ConfigurationError(f"need at least 2 classes, got {classes}")
    if noise < 0 or cue_strength <= 0:
        raise ConfigurationError("noise must be >= 0 and cue_strength > 0")
    level_dims = dict(DEFAULT_LEVEL_DIMS) if level_dims is None else dict(level_dims)
    for lvl, (h, w, _) in level_dims.items():
        if h < 2 or w < 2:
            raise ConfigurationError(
                f"level {lvl} needs h, w >= 2 for a quadrant cue, got {(h, w)}"
            )
    if class_names is None:
        class_names = [f"class{i}" for i in range(classes)]
    if len(class_names) != classes:
        raise ConfigurationError("class_names length must equal the class count")

    rng = np.random.default_rng(seed)
    base_maps = {}
    for lvl in LEVELS:
        h, w, d = level_dims[lvl]
        base_maps[lvl] = np.broadcast_to(_unit_vector(rng, d) / np.sqrt(h * w), (h, w, d)).copy()

    patterns = []  # per class: level -> zero-mean quadrant pattern
    text_protos = []
    for _ in range(classes):
        per_level = {}
        for lvl in LEVELS:
            h, w, d = level_dims[lvl]
            qh, qw = h // 2, w // 2
            direction = _unit_vector(rng, d) * cue_strength
            pattern = np.zeros((h, w, d))
            pattern[:qh, :qw, :] = direction
            inside = qh * qw
            outside = h * w - inside
            pattern[qh:, :, :] = -direction * (inside / outside)
            pattern[:qh, qw:, :] = -direction * (inside / outside)
            per_level[lvl] = pattern
        patterns.append(per_level)
        text_protos.append(_unit_vector(rng, text_dim))

    def centered_noise(lvl):
        h, w, d = level_dims[lvl]
        eta = rng.normal(0.0, noise, size=(h, w, d))
        return eta - eta.reshape(h * w, d).mean(axis=0)

    entries = []
    queries = []
    for class_index, label in enumerate(class_names):
        for i in range(entries_per_class):
            features = {
                lvl: base_maps[lvl] + patterns[class_index][lvl] + centered_noise(lvl)
                for lvl in LEVELS
            }
            entries.append(
                DatabaseEntry(id=f"e{class_index:02d}{i:04d}", label=label, features=features)
            )
        for i in range(queries_per_class):
            features = {
                lvl: base_maps[lvl] + patterns[class_index][lvl] + centered_noise(lvl)
                for lvl in LEVELS
            }
            text = text_protos[class_index] + rng.normal(
                0.0, noise, size=(tokens_per_query, text_dim)
            )
            queries.append(
                QueryRecord(
                    id=f"q{class_index:02d}{i:04d}",
                    label=label,
                    image_features=features,
                    text=text,
                )
            )

    bundle = FeatureBundle(
        level_dims=level_dims,
        text_dim=text_dim,
        class_names=list(class_names),
        entries=entries,
        queries=queries,
        provenance=f"local-cue seed={seed} noise={noise} cue={cue_strength}",
    )
    bundle.validate()
    return bundle
