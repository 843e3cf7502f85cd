"""Meta-report text built from 7-point-checklist attributes.

The template is deliberately simple and versioned: one clause per known
attribute in a fixed order, ``"<attribute name>: <value>"``, joined by
``"; "``. The version string travels in bundle provenance so downstream
runs can tell which template produced their query texts.
"""

from __future__ import annotations

import logging

from .errors import ExtractorDataError

logger = logging.getLogger(__name__)

TEMPLATE_VERSION = "meta-template-v1"

# canonical attribute order for the seven checklist criteria
CHECKLIST_ATTRIBUTES = (
    "pigment_network",
    "streaks",
    "pigmentation",
    "regression_structures",
    "dots_and_globules",
    "blue_whitish_veil",
    "vascular_structures",
)


def build_meta_text(attributes: dict) -> str:
    """Render checklist attributes into the deterministic report template."""
    unknown = set(attributes) - set(CHECKLIST_ATTRIBUTES)
    if unknown:
        raise ExtractorDataError(f"unknown checklist attributes: {sorted(unknown)}")
    if not attributes:
        logger.warning("empty attribute set: meta text is empty")
        return ""
    clauses = []
    for name in CHECKLIST_ATTRIBUTES:
        if name in attributes:
            value = str(attributes[name]).strip()
            clauses.append(f"{name.replace('_', ' ')}: {value}")
    return "; ".join(clauses)
