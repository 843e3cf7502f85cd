"""Vision and text backbones producing multi-level features and token embeddings.

Two families:

* Hashing backbones: pure-numpy, deterministic, dependency-free stand-ins
  (patch pooling + fixed random projections for images; per-token seeded
  embeddings for text). They produce real content-dependent features and are
  what the tests run on.
* Pretrained backbones: a hierarchical vision transformer via torchvision
  and a language model via transformers. These need the optional
  ``backbones`` extra and locally available weights; any load failure
  surfaces as ``BackboneUnavailableError``.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import BackboneUnavailableError, ExtractorConfigError

LEVELS = ("L", "M", "H")
DEFAULT_HASH_LEVEL_DIMS = {"L": (8, 8, 16), "M": (4, 4, 32), "H": (2, 2, 64)}
PATCH_SUBGRID = 4  # each patch is summarized by a 4x4 RGB grid before projection


def validate_hierarchy(level_dims: dict) -> None:
    """Spatially coarser and channel-wider from L to H, all dims positive."""
    if set(level_dims) != set(LEVELS):
        raise ExtractorConfigError(f"level dims must cover {LEVELS}, got {sorted(level_dims)}")
    for lvl, dims in level_dims.items():
        if len(dims) != 3 or any(int(x) < 1 for x in dims):
            raise ExtractorConfigError(f"level {lvl} dims must be positive, got {dims}")
    (hl, wl, dl), (hm, wm, dm), (hh, wh, dh) = (level_dims[l] for l in LEVELS)
    if not (hl > hm > hh and wl > wm > wh):
        raise ExtractorConfigError(
            f"spatial dims must shrink from L to H, got {level_dims}"
        )
    if not (dl < dm < dh):
        raise ExtractorConfigError(
            f"channel dims must grow from L to H, got {level_dims}"
        )


class HashingVisionBackbone:
    """Deterministic multi-level features from patch pooling + fixed projections."""

    def __init__(self, level_dims: dict | None = None, seed: int = 0):
        self.level_dims = dict(DEFAULT_HASH_LEVEL_DIMS if level_dims is None else level_dims)
        validate_hierarchy(self.level_dims)
        self._projections = {}
        rng = np.random.default_rng([seed, 0xF1E1D])
        in_dim = 3 * PATCH_SUBGRID * PATCH_SUBGRID
        for lvl in LEVELS:
            d = self.level_dims[lvl][2]
            self._projections[lvl] = rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(in_dim, d))

    @staticmethod
    def _pool_grid(image: np.ndarray, rows: int, cols: int) -> np.ndarray:
        """Average an (H, W, 3) image into (rows, cols, 3) cells."""
        h, w = image.shape[:2]
        row_edges = np.linspace(0, h, rows + 1, dtype=int)
        col_edges = np.linspace(0, w, cols + 1, dtype=int)
        out = np.empty((rows, cols, 3))
        for i in range(rows):
            for j in range(cols):
                cell = image[row_edges[i] : row_edges[i + 1], col_edges[j] : col_edges[j + 1]]
                out[i, j] = cell.mean(axis=(0, 1))
        return out

    def extract(self, image: np.ndarray) -> dict:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ExtractorConfigError(f"expected an (h, w, 3) image, got {image.shape}")
        if image.max() > 1.0:
            image = image / 255.0
        features = {}
        for lvl in LEVELS:
            h, w, _ = self.level_dims[lvl]
            fine = self._pool_grid(image, h * PATCH_SUBGRID, w * PATCH_SUBGRID)
            patches = fine.reshape(h, PATCH_SUBGRID, w, PATCH_SUBGRID, 3)
            patches = patches.transpose(0, 2, 1, 3, 4).reshape(h, w, -1)
            features[lvl] = patches @ self._projections[lvl]
        return features


class HashingTextEncoder:
    """Stable per-token embeddings seeded from a hash of the token text."""

    def __init__(self, text_dim: int = 16):
        if text_dim < 1:
            raise ExtractorConfigError(f"text_dim must be positive, got {text_dim}")
        self.text_dim = text_dim

    @staticmethod
    def tokenize(text: str) -> list:
        tokens = []
        for raw in text.lower().replace(";", " ").replace(":", " ").replace(",", " ").split():
            tokens.append(raw)
        return tokens if tokens else ["[empty]"]

    def _token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        seed = np.frombuffer(digest[:16], dtype=np.uint32)
        rng = np.random.default_rng(seed)
        return rng.normal(0.0, 1.0 / np.sqrt(self.text_dim), size=self.text_dim)

    def encode(self, text: str) -> np.ndarray:
        return np.stack([self._token_vector(t) for t in self.tokenize(text)])


class SwinVisionBackbone:
    """Last three stage outputs of a hierarchical vision transformer.

    Requires torch + torchvision; with ``pretrained=True`` the standard
    weights must be available locally (or downloadable), otherwise the
    backbone is seeded randomly but still hierarchical and deterministic
    per instance.
    """

    STAGE_NODES = {"L": "features.3", "M": "features.5", "H": "features.7"}

    def __init__(self, pretrained: bool = True, image_size: int = 512, seed: int = 0):
        try:
            import torch
            from torchvision.models import swin_t, Swin_T_Weights
            from torchvision.models.feature_extraction import create_feature_extractor
        except ImportError as exc:
            raise BackboneUnavailableError(
                f"torch/torchvision are not installed: {exc}"
            ) from exc
        self._torch = torch
        torch.manual_seed(seed)
        try:
            weights = Swin_T_Weights.DEFAULT if pretrained else None
            model = swin_t(weights=weights)
        except Exception as exc:
            raise BackboneUnavailableError(
                f"cannot load vision backbone weights: {exc}"
            ) from exc
        model.eval()
        self._extractor = create_feature_extractor(
            model, return_nodes={v: k for k, v in self.STAGE_NODES.items()}
        )
        stride = 4  # patch embedding stride; stages halve twice more
        base = image_size // stride
        self.level_dims = {
            "L": (base // 2, base // 2, 192),
            "M": (base // 4, base // 4, 384),
            "H": (base // 8, base // 8, 768),
        }
        validate_hierarchy(self.level_dims)

    def extract(self, image: np.ndarray) -> dict:
        torch = self._torch
        image = np.asarray(image, dtype=np.float64)
        if image.max() > 1.0:
            image = image / 255.0
        tensor = torch.from_numpy(image.transpose(2, 0, 1)[None]).float()
        with torch.no_grad():
            outputs = self._extractor(tensor)
        features = {}
        for lvl in LEVELS:
            # torchvision swin keeps maps channel-last: (1, h, w, c)
            features[lvl] = outputs[lvl][0].numpy().astype(np.float64)
            expected = self.level_dims[lvl]
            if features[lvl].shape != expected:
                raise ExtractorConfigError(
                    f"level {lvl} backbone output {features[lvl].shape} != {expected}"
                )
        return features


class PretrainedTextEncoder:
    """Token embeddings from a pretrained language model (via transformers)."""

    def __init__(self, model_id: str = "bert-base-uncased"):
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise BackboneUnavailableError(f"transformers is not installed: {exc}") from exc
        try:
            self._tokenizer = AutoTokenizer.from_pretrained(model_id)
            self._model = AutoModel.from_pretrained(model_id)
        except Exception as exc:
            raise BackboneUnavailableError(
                f"cannot load text encoder {model_id!r}: {exc}"
            ) from exc
        self._model.eval()
        self.text_dim = int(self._model.config.hidden_size)

    def encode(self, text: str) -> np.ndarray:
        import torch

        inputs = self._tokenizer(text if text else "[empty]", return_tensors="pt")
        with torch.no_grad():
            hidden = self._model(**inputs).last_hidden_state
        return hidden[0].numpy().astype(np.float64)


def make_vision_backbone(name: str, seed: int = 0, image_size: int = 512, pretrained: bool = True):
    if name == "hash":
        return HashingVisionBackbone(seed=seed)
    if name == "swin":
        return SwinVisionBackbone(pretrained=pretrained, image_size=image_size, seed=seed)
    raise ExtractorConfigError(f"unknown vision backbone {name!r}")


def make_text_encoder(name: str, text_dim: int = 16, model_id: str = "bert-base-uncased"):
    if name == "hash":
        return HashingTextEncoder(text_dim=text_dim)
    if name == "bert":
        return PretrainedTextEncoder(model_id=model_id)
    raise ExtractorConfigError(f"unknown text encoder {name!r}")
