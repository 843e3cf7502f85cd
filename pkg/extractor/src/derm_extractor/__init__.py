"""Dermoscopy feature extraction for the composed-retrieval engine.

Preprocess images (dark-border removal, resize), build meta-report query
texts from checklist attributes, run a hierarchical vision backbone and a
text encoder, and write the engine's feature-bundle format bit-exactly.
"""

__version__ = "0.1.0"

from .backbones import (
    HashingTextEncoder,
    HashingVisionBackbone,
    PretrainedTextEncoder,
    SwinVisionBackbone,
    make_text_encoder,
    make_vision_backbone,
    validate_hierarchy,
)
from .bundle_writer import write_bundle
from .export import extract_and_export
from .manifest import DatasetManifest, ManifestCase, load_manifest
from .meta_text import CHECKLIST_ATTRIBUTES, TEMPLATE_VERSION, build_meta_text
from .preprocess import find_border_crop, load_image, preprocess_file, preprocess_image
