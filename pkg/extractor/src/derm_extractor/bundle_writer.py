"""Standalone writer for the retrieval engine's bundle container.

Re-implements the documented format rather than importing the engine, so
this tool stays a pure producer of the interface: magic ``CIRB``, u32
version, u64 header length, JSON header, then raw float64 little-endian
row-major payload arrays in header order.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import ExtractorDataError

BUNDLE_MAGIC = b"CIRB"
BUNDLE_VERSION = 1
LEVELS = ("L", "M", "H")

_PREFIX = struct.Struct("<4sIQ")


def write_bundle(
    path,
    level_dims: dict,
    text_dim: int,
    class_names: list,
    entries: list,
    queries: list,
    provenance: str,
) -> None:
    """Write a feature bundle.

    ``entries`` is a list of ``(id, label, {level: array})``; ``queries`` is
    a list of ``(id, label, {level: array}, text_matrix)``.
    """
    for _, _, features in entries:
        _check_features(features, level_dims)
    for _, _, features, text in queries:
        _check_features(features, level_dims)
        text = np.asarray(text)
        if text.ndim != 2 or text.shape[0] < 1 or text.shape[1] != text_dim:
            raise ExtractorDataError(
                f"query text must be (n>=1, {text_dim}), got {text.shape}"
            )

    header = {
        "level_dims": {lvl: [int(x) for x in level_dims[lvl]] for lvl in LEVELS},
        "text_dim": int(text_dim),
        "class_names": list(class_names),
        "provenance": provenance,
        "entries": [{"id": eid, "label": label} for eid, label, _ in entries],
        "queries": [
            {"id": qid, "label": label, "tokens": int(np.asarray(text).shape[0])}
            for qid, label, _, text in queries
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as fh:
        fh.write(_PREFIX.pack(BUNDLE_MAGIC, BUNDLE_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for _, _, features in entries:
            for lvl in LEVELS:
                fh.write(np.ascontiguousarray(features[lvl], dtype="<f8").tobytes())
        for _, _, features, text in queries:
            for lvl in LEVELS:
                fh.write(np.ascontiguousarray(features[lvl], dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(text, dtype="<f8").tobytes())
    os.replace(tmp_path, path)


def _check_features(features: dict, level_dims: dict) -> None:
    for lvl in LEVELS:
        arr = np.asarray(features[lvl])
        expected = tuple(int(x) for x in level_dims[lvl])
        if arr.shape != expected:
            raise ExtractorDataError(
                f"feature map for level {lvl} has shape {arr.shape}, expected {expected}"
            )
        if not np.isfinite(arr).all():
            raise ExtractorDataError(f"level {lvl} features contain non-finite values")
