"""Cell records, class vocabulary and augmentation provenance tags."""

import re
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError

CLASS_NAMES = ("Homogeneous", "Speckled", "Nucleolar", "Centromere", "NuMem", "Golgi")

_ALIASES = {
    "homogeneous": 0, "homogenous": 0, "homo": 0,
    "speckled": 1,
    "nucleolar": 2,
    "centromere": 3,
    "numem": 4, "nuclearmembrane": 4, "nuclear_membrane": 4, "nuclear membrane": 4,
    "golgi": 5,
}


def label_id(name):
    """Class id for a pattern name (case-insensitive, common spellings accepted)."""
    if isinstance(name, (int, np.integer)):
        if 0 <= int(name) < len(CLASS_NAMES):
            return int(name)
        raise DataError(f"class id {name} out of range")
    key = str(name).strip().lower()
    if key in _ALIASES:
        return _ALIASES[key]
    if key.replace(" ", "") in _ALIASES:
        return _ALIASES[key.replace(" ", "")]
    raise DataError(f"unknown staining pattern {name!r}")


def label_name(label):
    return CLASS_NAMES[label]


_ROT_NAMES = ("Original", "Rot90", "Rot180", "Rot270")
_PROV_RE = re.compile(r"^(?:MirrorOf\((\w+)\)|(\w+))$")


def provenance_name(turns, mirrored):
    base = _ROT_NAMES[turns % 4]
    return f"MirrorOf({base})" if mirrored else base


def parse_provenance(tag):
    """Inverse of :func:`provenance_name`: ``(quarter_turns, mirrored)``."""
    m = _PROV_RE.match(tag.strip())
    if not m:
        raise DataError(f"bad provenance tag {tag!r}")
    base = m.group(1) or m.group(2)
    if base not in _ROT_NAMES:
        raise DataError(f"bad provenance tag {tag!r}")
    return _ROT_NAMES.index(base), m.group(1) is not None


@dataclass(frozen=True, eq=False)
class CellRecord:
    """One cell image with its class label and originating specimen.

    ``provenance`` names the dihedral transform relative to the extracted
    cell: ``MirrorOf(RotK)`` means the left-right flip of the K-degree
    counter-clockwise rotation.
    """

    pixels: np.ndarray
    label: int
    specimen_id: str
    provenance: str = "Original"
    source: str = field(default=None, compare=False)

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] != px.shape[1] or px.shape[0] == 0:
            raise DataError(f"cell pixels must be a non-empty square grid, got {px.shape}")
        if not self.specimen_id:
            raise DataError("cell record has an empty specimen_id")
        if not 0 <= int(self.label) < len(CLASS_NAMES):
            raise DataError(f"label {self.label} out of range")
        parse_provenance(self.provenance)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "label", int(self.label))

    @property
    def side(self):
        return self.pixels.shape[0]

    def replace(self, **changes):
        fields = dict(pixels=self.pixels, label=self.label, specimen_id=self.specimen_id,
                      provenance=self.provenance, source=self.source)
        fields.update(changes)
        return CellRecord(**fields)


def class_counts(records, num_classes=len(CLASS_NAMES)):
    counts = [0] * num_classes
    for r in records:
        counts[r.label] += 1
    return counts


def specimen_counts(records):
    counts = {}
    for r in records:
        counts[r.specimen_id] = counts.get(r.specimen_id, 0) + 1
    return counts


def stack_pixels(records, dtype=np.float32):
    """(n, 1, h, w) batch array from equally sized records."""
    if not records:
        return np.zeros((0, 1, 0, 0), dtype=dtype)
    return np.stack([r.pixels for r in records]).astype(dtype, copy=False)[:, None]


def labels_of(records):
    return np.array([r.label for r in records], dtype=np.int64)
