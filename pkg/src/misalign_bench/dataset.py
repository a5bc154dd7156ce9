"""Evaluation manifest: images, ground-truth maps, reference safety labels.

The manifest is a UTF-8 CSV with header ``image_id,image_path,gt_path,
safety_label``. Relative paths resolve against the manifest's directory.
Safety labels are required inputs; nothing in the harness ever infers them
from pixels.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .pngio import IGNORE, N_CLASSES

#: Canonical trainId order for the 19 evaluation classes. Class-indexed
#: tables emitted by this package assume this order.
CLASS_NAMES = (
    "road", "sidewalk", "building", "wall", "fence", "pole",
    "traffic light", "traffic sign", "vegetation", "terrain", "sky",
    "person", "rider", "car", "truck", "bus", "train", "motorcycle",
    "bicycle",
)

DEFAULT_CRITICAL_NAMES = ("traffic light", "traffic sign", "person", "rider", "bicycle")


class SafetyLabel(str, Enum):
    SAFE = "safe"
    UNSAFE = "unsafe"


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ClassTaxonomy:
    """The 19-class universe plus the configurable safety-critical subset."""

    names: tuple[str, ...] = CLASS_NAMES
    critical: frozenset[int] = field(
        default_factory=lambda: frozenset(CLASS_NAMES.index(n) for n in DEFAULT_CRITICAL_NAMES)
    )

    def __post_init__(self):
        if len(self.names) != N_CLASSES or len(set(self.names)) != N_CLASSES:
            raise ValueError(f"taxonomy needs {N_CLASSES} unique class names, got {self.names!r}")
        if not all(0 <= c < N_CLASSES for c in self.critical):
            raise ValueError(f"critical ids outside 0..{N_CLASSES - 1}: {sorted(self.critical)}")

    def class_id(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValueError(f"unknown class name: {name!r}") from None

    def name(self, class_id: int) -> str:
        if not 0 <= class_id < N_CLASSES:
            raise ValueError(f"class id out of range: {class_id}")
        return self.names[class_id]

    @classmethod
    def from_file(cls, path) -> "ClassTaxonomy":
        """JSON file: {"names": [... 19 ...], "critical": [names or ids]}."""
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
        names = tuple(raw.get("names", CLASS_NAMES))
        critical = raw.get("critical", list(DEFAULT_CRITICAL_NAMES))
        ids = frozenset(
            c if isinstance(c, int) else names.index(c) for c in critical
        )
        return cls(names=names, critical=ids)


@dataclass(frozen=True)
class SampleEntry:
    image_id: str
    image_path: Path
    gt_path: Path
    safety_label: SafetyLabel


MANIFEST_COLUMNS = ("image_id", "image_path", "gt_path", "safety_label")


def load_manifest(path, check_files: bool = True) -> list[SampleEntry]:
    """Parse and validate the manifest; rejects rows with precise diagnostics."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent
    entries: list[SampleEntry] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        got = tuple(reader.fieldnames or ())
        if got != MANIFEST_COLUMNS:
            raise ManifestError(
                f"{path}: expected header {','.join(MANIFEST_COLUMNS)}, got {','.join(got)}"
            )
        for rownum, row in enumerate(reader, start=2):
            if any(v is None for v in row.values()) or None in row:
                raise ManifestError(f"{path}:{rownum}: wrong number of fields")
            image_id = row["image_id"].strip()
            if not image_id:
                raise ManifestError(f"{path}:{rownum}: empty image_id")
            if image_id in seen:
                raise ManifestError(f"{path}:{rownum}: duplicate image_id {image_id!r}")
            seen.add(image_id)
            label_raw = row["safety_label"].strip().lower()
            try:
                label = SafetyLabel(label_raw)
            except ValueError:
                raise ManifestError(
                    f"{path}:{rownum}: safety_label must be safe or unsafe, got {row['safety_label']!r}"
                ) from None
            image_path = base / row["image_path"].strip()
            gt_path = base / row["gt_path"].strip()
            if check_files:
                for what, p in (("image_path", image_path), ("gt_path", gt_path)):
                    if not p.is_file():
                        raise ManifestError(f"{path}:{rownum}: {what} does not exist: {p}")
            entries.append(SampleEntry(image_id, image_path, gt_path, label))
    return entries


def gt_class_set(gt, min_pixels: int = 1) -> frozenset[int]:
    """Classes present in a ground-truth map with at least min_pixels pixels."""
    if min_pixels < 1:
        raise ValueError(f"min_pixels must be >= 1, got {min_pixels}")
    arr = np.asarray(gt)
    counts = np.bincount(arr[arr != IGNORE].ravel(), minlength=N_CLASSES)[:N_CLASSES]
    return frozenset(int(c) for c in np.nonzero(counts >= min_pixels)[0])


def critical_present(gt_set: frozenset[int], taxonomy: ClassTaxonomy) -> frozenset[int]:
    """Safety-critical classes actually present in the scene."""
    return frozenset(gt_set) & taxonomy.critical
