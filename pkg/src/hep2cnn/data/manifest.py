"""Dataset manifests: a header plus one CSV line per cell image.

Columns are ``relative_image_path,label_name,specimen_id,provenance``; image
paths are relative to the manifest's directory.
"""

import csv
import io
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from ..errors import DataError
from .imageio import read_gray, write_gray
from .records import CLASS_NAMES, CellRecord, label_id, label_name, parse_provenance

COLUMNS = ("relative_image_path", "label_name", "specimen_id", "provenance")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    specimen_id: str
    provenance: str


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple

    @property
    def class_counts(self):
        c = Counter(e.label for e in self.entries)
        return {name: c.get(i, 0) for i, name in enumerate(CLASS_NAMES)}

    @property
    def specimen_counts(self):
        return dict(Counter(e.specimen_id for e in self.entries))

    def __len__(self):
        return len(self.entries)


def _image_name(i, record):
    tag = record.provenance.replace("MirrorOf(", "m").replace(")", "").lower()
    return f"images/{record.specimen_id}/{i:06d}_{tag}.png"


def write_manifest(records, path, image_names=None):
    """Write every record's pixels as PNG next to the manifest, then the manifest.

    Returns the :class:`DatasetManifest` describing what was written.
    """
    path = Path(path)
    root = path.parent
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    seen = set()
    for i, r in enumerate(records):
        rel = image_names[i] if image_names is not None else _image_name(i, r)
        if rel in seen:
            raise DataError(f"duplicate image path {rel}", record_index=i)
        seen.add(rel)
        write_gray(root / rel, r.pixels)
        entries.append(ManifestEntry(rel, r.label, r.specimen_id, r.provenance))
    manifest = DatasetManifest(tuple(entries))
    path.write_text(format_manifest(manifest), encoding="utf-8")
    return manifest


def format_manifest(manifest):
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(COLUMNS)
    for e in manifest.entries:
        out.writerow((e.path, label_name(e.label), e.specimen_id, e.provenance))
    return buf.getvalue()


def read_manifest(path):
    """Parse a manifest without touching the image files."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError("manifest not found", path=path) from None
    rows = csv.reader(io.StringIO(text))
    header = next(rows, None)
    if header is None or tuple(h.strip() for h in header) != COLUMNS:
        raise DataError(f"expected header {','.join(COLUMNS)}", path=path, line=1)
    entries = []
    seen = set()
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(COLUMNS):
            raise DataError(f"expected {len(COLUMNS)} fields, got {len(row)}",
                            path=path, line=lineno)
        rel, name, sid, prov = (cell.strip() for cell in row)
        try:
            label = label_id(name)
            parse_provenance(prov)
        except DataError as exc:
            raise DataError(str(exc), path=path, line=lineno) from None
        if not rel or not sid:
            raise DataError("empty image path or specimen_id", path=path, line=lineno)
        if rel in seen:
            raise DataError(f"duplicate image path {rel}", path=path, line=lineno)
        seen.add(rel)
        entries.append(ManifestEntry(rel, label, sid, prov))
    return DatasetManifest(tuple(entries))


def load_manifest(path, scale=True):
    """Records for every manifest line, pixels decoded from the image files."""
    path = Path(path)
    manifest = read_manifest(path)
    root = path.parent
    records = []
    for e in manifest.entries:
        img = root / e.path
        if not img.is_file():
            raise DataError("image listed in manifest is missing", path=img)
        records.append(CellRecord(read_gray(img, scale=scale), e.label, e.specimen_id,
                                  e.provenance, source=str(img)))
    return records
