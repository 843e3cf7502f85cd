"""Image preprocessing: dark-border removal and resizing.

Dermoscopy captures often carry black framing artifacts. We strip the
maximal border rows/columns whose mean intensity falls below a threshold,
then resize to a square target. If cropping would discard more than half
the area the frame detection is considered unreliable: a warning is logged
and the crop is skipped.
"""

from __future__ import annotations

import logging

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ExtractorDataError

logger = logging.getLogger(__name__)

TARGET_SIZE = 512
BORDER_THRESHOLD = 10.0 / 255.0
MAX_CROP_FRACTION = 0.5


def load_image(path) -> np.ndarray:
    """Decode an image file into an (h, w, 3) uint8 array."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ExtractorDataError(f"cannot decode image {path}: {exc}") from exc


def find_border_crop(image: np.ndarray, threshold: float = BORDER_THRESHOLD) -> tuple:
    """(top, bottom, left, right) bounds after stripping dark border lines.

    Bounds are half-open row/column indices into the input. Intensity is the
    grayscale mean of a full row/column, compared against ``threshold`` on a
    0..1 scale.
    """
    gray = image.astype(np.float64).mean(axis=2) / 255.0
    h, w = gray.shape
    row_dark = gray.mean(axis=1) < threshold
    col_dark = gray.mean(axis=0) < threshold

    top = 0
    while top < h and row_dark[top]:
        top += 1
    bottom = h
    while bottom > top and row_dark[bottom - 1]:
        bottom -= 1
    left = 0
    while left < w and col_dark[left]:
        left += 1
    right = w
    while right > left and col_dark[right - 1]:
        right -= 1
    return top, bottom, left, right


def preprocess_image(
    image: np.ndarray,
    size: int = TARGET_SIZE,
    threshold: float = BORDER_THRESHOLD,
) -> np.ndarray:
    """Strip dark borders and resize to (size, size, 3) uint8."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise ExtractorDataError(f"expected an (h, w, 3) image, got shape {image.shape}")
    if image.dtype != np.uint8:
        image = np.clip(image, 0, 255).astype(np.uint8)

    h, w = image.shape[:2]
    top, bottom, left, right = find_border_crop(image, threshold)
    kept = (bottom - top) * (right - left)
    if kept <= 0 or kept < MAX_CROP_FRACTION * h * w:
        if (top, bottom, left, right) != (0, h, 0, w):
            logger.warning(
                "border crop would remove %.0f%% of the image; skipping crop",
                100.0 * (1.0 - max(kept, 0) / (h * w)),
            )
        cropped = image
    else:
        cropped = image[top:bottom, left:right]

    resized = Image.fromarray(cropped).resize((size, size), Image.BILINEAR)
    return np.asarray(resized)


def preprocess_file(path, size: int = TARGET_SIZE, threshold: float = BORDER_THRESHOLD) -> np.ndarray:
    return preprocess_image(load_image(path), size=size, threshold=threshold)
