"""Specimen-to-cell extraction, resizing, augmentation and manifests."""

from .extract import SpecimenImage, extract_cells
from .manifest import DatasetManifest, load_manifest, read_manifest, write_manifest
from .records import CLASS_NAMES, CellRecord, class_counts, label_id, specimen_counts
from .transforms import (
    TASK2_POLICY,
    augment_task2_policy,
    augment_x8,
    build_set3,
    mirror,
    resize_array,
    resize_bilinear,
    rotate,
)
