"""Cell extraction from specimen images and their segmentation masks."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import DataError
from .records import CellRecord, label_id

BOX = 77
_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True, eq=False)
class SpecimenImage:
    pixels: np.ndarray
    specimen_id: str
    label: int

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or min(px.shape) == 0:
            raise DataError(f"specimen {self.specimen_id}: bad image shape {px.shape}")
        if not self.specimen_id:
            raise DataError("specimen_id must be nonempty")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "label", label_id(self.label))


def component_centres(mask):
    """Centroids (row, col) of the 8-connected foreground components,
    rounded half-up to the nearest pixel, in label order."""
    labelled, count = ndimage.label(np.asarray(mask, dtype=bool), structure=_EIGHT)
    if count == 0:
        return []
    centres = ndimage.center_of_mass(np.ones_like(labelled), labelled, range(1, count + 1))
    return [(int(np.floor(r + 0.5)), int(np.floor(c + 0.5))) for r, c in centres]


def extract_cells(specimen, mask, box=BOX):
    """One ``box`` x ``box`` crop per connected mask component.

    Crops are centred on the component centroid; a crop that would leave
    the image is skipped. Touching cells form one component and one crop.
    """
    mask = np.asarray(mask)
    if mask.shape != specimen.pixels.shape:
        raise DataError(
            f"specimen {specimen.specimen_id}: mask shape {mask.shape} != image shape "
            f"{specimen.pixels.shape}"
        )
    half = box // 2
    h, w = mask.shape
    cells = []
    for r, c in component_centres(mask):
        top, left = r - half, c - half
        if top < 0 or left < 0 or top + box > h or left + box > w:
            continue
        crop = specimen.pixels[top:top + box, left:left + box].copy()
        cells.append(CellRecord(crop, specimen.label, specimen.specimen_id))
    return cells
