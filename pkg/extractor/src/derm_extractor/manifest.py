"""Dataset manifests: delimiter-separated case tables with a class filter.

Expected columns: ``id``, ``image`` (path, relative to an images root),
``diagnosis``, plus any subset of the seven checklist attribute columns.
Empty attribute cells mean "not recorded" and are dropped from the case's
attribute set.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field

from .errors import ExtractorDataError
from .meta_text import CHECKLIST_ATTRIBUTES

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("id", "image", "diagnosis")
DEFAULT_MIN_CLASS_COUNT = 50


@dataclass
class ManifestCase:
    id: str
    image_path: str
    diagnosis: str
    attributes: dict


@dataclass
class DatasetManifest:
    cases: list
    class_counts: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.class_counts:
            self.class_counts = dict(Counter(c.diagnosis for c in self.cases))

    def labels(self) -> list:
        return sorted(self.class_counts)

    def __len__(self):
        return len(self.cases)


def load_manifest(
    path,
    min_class_count: int = DEFAULT_MIN_CLASS_COUNT,
    delimiter: str | None = None,
) -> DatasetManifest:
    """Read a case table and keep only classes with enough samples.

    ``delimiter`` is sniffed from the header line (tab or comma) when not
    given explicitly.
    """
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.strip():
            raise ExtractorDataError(f"{path}: empty manifest")
        if delimiter is None:
            delimiter = "\t" if "\t" in first else ","
        fh.seek(0)
        reader = csv.DictReader(fh, delimiter=delimiter)
        columns = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in columns]
        if missing:
            raise ExtractorDataError(f"{path}: manifest missing columns {missing}")
        attribute_columns = [c for c in columns if c in CHECKLIST_ATTRIBUTES]

        cases = []
        seen = set()
        for line_no, row in enumerate(reader, start=2):
            case_id = (row.get("id") or "").strip()
            image = (row.get("image") or "").strip()
            diagnosis = (row.get("diagnosis") or "").strip()
            if not case_id or not image or not diagnosis:
                raise ExtractorDataError(
                    f"{path}:{line_no}: id, image and diagnosis are required"
                )
            if case_id in seen:
                raise ExtractorDataError(f"{path}:{line_no}: duplicate id {case_id!r}")
            seen.add(case_id)
            attributes = {}
            for name in attribute_columns:
                value = (row.get(name) or "").strip()
                if value:
                    attributes[name] = value
            cases.append(
                ManifestCase(
                    id=case_id, image_path=image, diagnosis=diagnosis, attributes=attributes
                )
            )

    counts = Counter(c.diagnosis for c in cases)
    kept_classes = {label for label, n in counts.items() if n >= min_class_count}
    dropped = sorted(set(counts) - kept_classes)
    if dropped:
        logger.info(
            "dropping %d classes below %d samples: %s",
            len(dropped), min_class_count, dropped,
        )
    kept = [c for c in cases if c.diagnosis in kept_classes]
    if not kept:
        raise ExtractorDataError(
            f"{path}: no classes have at least {min_class_count} samples"
        )
    return DatasetManifest(
        cases=kept, class_counts={label: counts[label] for label in sorted(kept_classes)}
    )
