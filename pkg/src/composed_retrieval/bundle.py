"""On-disk containers: feature bundles and model checkpoints.

Both share one layout: a 4-byte magic string, a little-endian u32 format
version, a u64 header length, a JSON metadata header, then raw float64
little-endian payload arrays in the order the header declares. Round-trips
are bit-exact. Loading validates everything before returning; a file that
fails any check produces no partial object.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BundleCorruptionError,
    BundleFormatError,
    BundleVersionError,
    DataError,
)
from .features import LEVELS, validate_level_dims
from .model import ModelConfig, RetrievalModel
from .retrieval import DatabaseEntry, QueryRecord

BUNDLE_MAGIC = b"CIRB"
CHECKPOINT_MAGIC = b"CIRC"
BUNDLE_VERSION = 1
CHECKPOINT_VERSION = 1

_HEADER_PREFIX = struct.Struct("<4sIQ")


@dataclass
class FeatureBundle:
    """A dataset at rest: per-image multi-level features plus query texts."""

    level_dims: dict
    text_dim: int
    class_names: list
    entries: list
    queries: list
    provenance: str = ""
    format_version: int = BUNDLE_VERSION

    def validate(self) -> None:
        validate_level_dims({lvl: tuple(d) for lvl, d in self.level_dims.items()})
        if self.text_dim < 1:
            raise DataError(f"text_dim must be positive, got {self.text_dim}")
        if not self.class_names:
            raise DataError("class_names must be nonempty")
        if len(set(self.class_names)) != len(self.class_names):
            raise DataError("class_names contains duplicates")
        classes = set(self.class_names)

        seen = set()
        for entry in self.entries:
            if entry.id in seen:
                raise DataError(f"duplicate entry id {entry.id!r}")
            seen.add(entry.id)
            if entry.label not in classes:
                raise DataError(f"entry {entry.id!r} has unknown label {entry.label!r}")
            self._check_features(entry.id, entry.features)
        label_of = {e.id: e.label for e in self.entries}

        seen = set()
        for query in self.queries:
            if query.id in seen:
                raise DataError(f"duplicate query id {query.id!r}")
            seen.add(query.id)
            if query.label not in classes:
                raise DataError(f"query {query.id!r} has unknown label {query.label!r}")
            if query.id in label_of and label_of[query.id] != query.label:
                raise DataError(
                    f"id {query.id!r} has label {query.label!r} as query "
                    f"but {label_of[query.id]!r} as entry"
                )
            self._check_features(query.id, query.image_features)
            text = np.asarray(query.text)
            if text.ndim != 2 or text.shape[0] < 1 or text.shape[1] != self.text_dim:
                raise DataError(
                    f"query {query.id!r} text has shape {text.shape}, "
                    f"expected (n>=1, {self.text_dim})"
                )
            if not np.isfinite(text).all():
                raise DataError(f"query {query.id!r} text contains non-finite values")

    def _check_features(self, owner: str, features: dict) -> None:
        if set(features) != set(LEVELS):
            raise DataError(f"{owner!r} features must cover levels {LEVELS}")
        for lvl in LEVELS:
            arr = np.asarray(features[lvl])
            expected = tuple(self.level_dims[lvl])
            if arr.shape != expected:
                raise DataError(
                    f"{owner!r} level {lvl} map has shape {arr.shape}, expected {expected}"
                )
            if not np.isfinite(arr).all():
                raise DataError(f"{owner!r} level {lvl} map contains non-finite values")

    def id_labels(self) -> dict:
        """Union of entry and query (id, label) pairs."""
        labels = {e.id: e.label for e in self.entries}
        labels.update({q.id: q.label for q in self.queries})
        return labels

    def model_config(self, region_count: int = 4) -> ModelConfig:
        return ModelConfig(
            level_dims={lvl: tuple(self.level_dims[lvl]) for lvl in LEVELS},
            text_dim=self.text_dim,
            region_count=region_count,
        )


# -- generic container io ---------------------------------------------------


def _write_container(path, magic: bytes, version: int, header: dict, arrays) -> None:
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as fh:
        fh.write(_HEADER_PREFIX.pack(magic, version, len(header_bytes)))
        fh.write(header_bytes)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    os.replace(tmp_path, path)


def _read_container(path, magic: bytes, supported_versions) -> tuple[int, dict, bytes]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER_PREFIX.size:
        raise BundleFormatError(f"{path}: file too short to hold a container header")
    got_magic, version, header_len = _HEADER_PREFIX.unpack_from(blob, 0)
    if got_magic != magic:
        raise BundleFormatError(
            f"{path}: bad magic {got_magic!r}, expected {magic!r}"
        )
    if version not in supported_versions:
        raise BundleVersionError(f"{path}: unsupported format version {version}")
    header_end = _HEADER_PREFIX.size + header_len
    if header_end > len(blob):
        raise BundleCorruptionError(f"{path}: declared header length exceeds file size")
    try:
        header = json.loads(blob[_HEADER_PREFIX.size : header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BundleFormatError(f"{path}: header is not valid JSON ({exc})") from exc
    return version, header, blob[header_end:]


class _PayloadReader:
    def __init__(self, payload: bytes, path):
        self.payload = payload
        self.offset = 0
        self.path = path

    def read_array(self, shape, owner: str) -> np.ndarray:
        count = int(np.prod(shape))
        nbytes = count * 8
        if self.offset + nbytes > len(self.payload):
            raise BundleCorruptionError(
                f"{self.path}: payload truncated while reading {owner!r}"
            )
        arr = np.frombuffer(self.payload, dtype="<f8", count=count, offset=self.offset)
        self.offset += nbytes
        out = arr.astype(np.float64, copy=True).reshape(shape)
        if not np.isfinite(out).all():
            raise BundleCorruptionError(
                f"{self.path}: non-finite values in payload of {owner!r}"
            )
        return out

    def finish(self) -> None:
        if self.offset != len(self.payload):
            raise BundleCorruptionError(
                f"{self.path}: {len(self.payload) - self.offset} unexpected trailing bytes"
            )


# -- feature bundles ---------------------------------------------------------


def save_bundle(bundle: FeatureBundle, path) -> None:
    bundle.validate()
    header = {
        "level_dims": {lvl: list(map(int, bundle.level_dims[lvl])) for lvl in LEVELS},
        "text_dim": int(bundle.text_dim),
        "class_names": list(bundle.class_names),
        "provenance": bundle.provenance,
        "entries": [{"id": e.id, "label": e.label} for e in bundle.entries],
        "queries": [
            {"id": q.id, "label": q.label, "tokens": int(np.asarray(q.text).shape[0])}
            for q in bundle.queries
        ],
    }
    arrays = []
    for entry in bundle.entries:
        arrays.extend(entry.features[lvl] for lvl in LEVELS)
    for query in bundle.queries:
        arrays.extend(query.image_features[lvl] for lvl in LEVELS)
        arrays.append(query.text)
    _write_container(path, BUNDLE_MAGIC, bundle.format_version, header, arrays)


def load_bundle(path) -> FeatureBundle:
    version, header, payload = _read_container(path, BUNDLE_MAGIC, {BUNDLE_VERSION})
    try:
        level_dims = {lvl: tuple(int(x) for x in header["level_dims"][lvl]) for lvl in LEVELS}
        text_dim = int(header["text_dim"])
        class_names = list(header["class_names"])
        provenance = str(header.get("provenance", ""))
        entry_meta = header["entries"]
        query_meta = header["queries"]
    except (KeyError, TypeError) as exc:
        raise BundleFormatError(f"{path}: header missing required field ({exc})") from exc

    reader = _PayloadReader(payload, path)
    entries = []
    for meta in entry_meta:
        features = {
            lvl: reader.read_array(level_dims[lvl], f"entry {meta['id']}") for lvl in LEVELS
        }
        entries.append(DatabaseEntry(id=meta["id"], label=meta["label"], features=features))
    queries = []
    for meta in query_meta:
        features = {
            lvl: reader.read_array(level_dims[lvl], f"query {meta['id']}") for lvl in LEVELS
        }
        tokens = int(meta["tokens"])
        if tokens < 1:
            raise BundleFormatError(f"{path}: query {meta['id']!r} declares {tokens} tokens")
        text = reader.read_array((tokens, text_dim), f"query {meta['id']} text")
        queries.append(
            QueryRecord(id=meta["id"], label=meta["label"], image_features=features, text=text)
        )
    reader.finish()

    bundle = FeatureBundle(
        level_dims=level_dims,
        text_dim=text_dim,
        class_names=class_names,
        entries=entries,
        queries=queries,
        provenance=provenance,
        format_version=version,
    )
    bundle.validate()
    return bundle


# -- model checkpoints --------------------------------------------------------


def save_checkpoint(model: RetrievalModel, path, extra: dict | None = None) -> None:
    named = model.named_parameters()
    header = {
        "model_config": model.config.to_dict(),
        "blocks": [
            {"name": name, "shape": list(p.data.shape)} for name, p in named
        ],
        "extra": extra or {},
    }
    _write_container(
        path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, header, [p.data for _, p in named]
    )


def load_checkpoint(path) -> tuple[RetrievalModel, dict]:
    _, header, payload = _read_container(path, CHECKPOINT_MAGIC, {CHECKPOINT_VERSION})
    try:
        config = ModelConfig.from_dict(header["model_config"])
        blocks = header["blocks"]
    except (KeyError, TypeError) as exc:
        raise BundleFormatError(f"{path}: header missing required field ({exc})") from exc
    reader = _PayloadReader(payload, path)
    state = {}
    for block in blocks:
        state[block["name"]] = reader.read_array(tuple(block["shape"]), block["name"])
    reader.finish()
    model = RetrievalModel.initialize(config, seed=0)
    model.load_state_dict(state)
    return model, header.get("extra", {})
