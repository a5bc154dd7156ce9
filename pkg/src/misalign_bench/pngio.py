"""PNG I/O for 8-bit RGB images and single-channel label maps."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .corruption import require_rgb8

N_CLASSES = 19
IGNORE = 255


class LabelMapError(ValueError):
    pass


def load_rgb(path) -> np.ndarray:
    with PILImage.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_rgb(img, path) -> None:
    arr = require_rgb8(img)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(arr, mode="RGB").save(path, format="PNG")


def validate_label_values(arr: np.ndarray, what: str = "label map") -> np.ndarray:
    bad = arr[(arr >= N_CLASSES) & (arr != IGNORE)]
    if bad.size:
        raise LabelMapError(
            f"{what} contains invalid class ids {sorted(set(bad.tolist()))[:8]}; "
            f"expected 0..{N_CLASSES - 1} or {IGNORE}"
        )
    return arr


def load_label_map(path) -> np.ndarray:
    """Single-channel class-id raster: values 0..18, 255 = ignore."""
    with PILImage.open(path) as im:
        if im.mode not in ("L", "P", "I", "I;16"):
            raise LabelMapError(f"{path}: expected single-channel PNG, got mode {im.mode}")
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise LabelMapError(f"{path}: expected 2-D label map, got shape {arr.shape}")
    arr = arr.astype(np.uint8) if arr.dtype != np.uint8 else arr
    return validate_label_values(arr, what=str(path))


def save_label_map(labels, path) -> None:
    arr = np.asarray(labels)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise LabelMapError(f"expected 2-D uint8 label map, got dtype={arr.dtype} shape={arr.shape}")
    validate_label_values(arr)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(arr, mode="L").save(path, format="PNG")
