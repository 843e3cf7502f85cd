"""End-to-end extraction: manifest -> preprocess -> backbones -> bundle file.

Every eligible case becomes a database entry; cases with at least one
checklist attribute also become queries (same id, meta-report text encoded
to token embeddings). The engine's self-exclusion handles the id overlap at
evaluation time.
"""

from __future__ import annotations

import logging
import os

from . import __version__
from .backbones import validate_hierarchy
from .bundle_writer import write_bundle
from .errors import ExtractorDataError
from .manifest import DatasetManifest
from .meta_text import TEMPLATE_VERSION, build_meta_text
from .preprocess import BORDER_THRESHOLD, TARGET_SIZE, preprocess_file

logger = logging.getLogger(__name__)


def extract_and_export(
    manifest: DatasetManifest,
    output_path,
    vision,
    text_encoder,
    images_root: str = "",
    size: int = TARGET_SIZE,
    threshold: float = BORDER_THRESHOLD,
    backbone_note: str = "",
) -> dict:
    """Run the pipeline and write a bundle; returns a small summary dict."""
    validate_hierarchy(vision.level_dims)
    if not manifest.cases:
        raise ExtractorDataError("manifest has no cases")

    entries = []
    queries = []
    for case in manifest.cases:
        image_path = os.path.join(images_root, case.image_path) if images_root else case.image_path
        image = preprocess_file(image_path, size=size, threshold=threshold)
        features = vision.extract(image)
        entries.append((case.id, case.diagnosis, features))
        if case.attributes:
            text = build_meta_text(case.attributes)
            tokens = text_encoder.encode(text)
            queries.append((case.id, case.diagnosis, features, tokens))
        else:
            logger.warning("case %s has no checklist attributes; entry only", case.id)

    if not queries:
        raise ExtractorDataError("no cases had checklist attributes; bundle needs queries")

    provenance = (
        f"derm-extractor {__version__}; backbone={backbone_note or type(vision).__name__}; "
        f"text={type(text_encoder).__name__}; template={TEMPLATE_VERSION}; "
        f"size={size}; border_threshold={threshold:g}"
    )
    write_bundle(
        output_path,
        level_dims=vision.level_dims,
        text_dim=text_encoder.text_dim,
        class_names=manifest.labels(),
        entries=entries,
        queries=queries,
        provenance=provenance,
    )
    return {
        "entries": len(entries),
        "queries": len(queries),
        "classes": manifest.labels(),
        "provenance": provenance,
    }
