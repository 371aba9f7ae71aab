"""Grayscale image decode/encode (PNG and PGM)."""

from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import DataError


def read_gray(path, scale=True):
    """Load an image as a 2-D float array.

    Colour images are reduced to luminance. With ``scale`` the intensities
    are mapped to [0, 1] by the bit depth; otherwise raw levels are kept.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64)
                top = 65535.0
            else:
                if im.mode != "L":
                    im = im.convert("L")
                arr = np.asarray(im, dtype=np.float64)
                top = 255.0
    except FileNotFoundError:
        raise DataError("image file not found", path=path) from None
    except OSError as exc:
        raise DataError(f"cannot decode image: {exc}", path=path) from None
    if arr.ndim != 2:
        raise DataError(f"expected a 2-D grayscale image, got shape {arr.shape}", path=path)
    return (arr / top if scale else arr).astype(np.float32)


def write_gray(path, pixels):
    """Write [0, 1] intensities as an 8-bit PNG (or PGM by extension)."""
    arr = np.clip(np.rint(np.asarray(pixels, dtype=np.float64) * 255.0), 0, 255)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr.astype(np.uint8)).save(path)


def read_mask(path):
    """Binary mask: any nonzero pixel is foreground."""
    return read_gray(path, scale=False) > 0
