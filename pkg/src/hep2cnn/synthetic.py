"""Procedural cell images with a tunable specimen effect.

Every class owns a texture family. A cell mixes a freshly drawn texture of
its class with a texture drawn once for its specimen, plus (scaled by the
same correlation) a specimen-wide distractor texture from another family and
a specimen brightness gain. At correlation 0 specimens carry no information;
at correlation 1 without noise every cell of a specimen is the same image
seen at a different position and orientation.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data.manifest import write_manifest
from .data.records import CLASS_NAMES, CellRecord
from .errors import ConfigError

SIDE = 60
FAMILIES = ("disk", "stripes", "blobs", "dots", "annulus", "patch")


@dataclass(frozen=True)
class SynthSpec:
    num_specimens_per_class: int = 8
    cells_per_specimen: int = 40
    classes: int = 6
    intra_specimen_correlation: float = 0.0
    noise_std: float = 0.05
    seed: int = 0
    distractor_strength: float = 1.0
    max_shift: float = 4.0

    def __post_init__(self):
        if min(self.num_specimens_per_class, self.cells_per_specimen, self.classes) < 1:
            raise ConfigError("specimen, cell and class counts must be positive")
        if self.classes > len(FAMILIES):
            raise ConfigError(f"at most {len(FAMILIES)} texture families are available")
        if not 0.0 <= self.intra_specimen_correlation <= 1.0:
            raise ConfigError("intra_specimen_correlation must lie in [0, 1]")
        if self.noise_std < 0 or self.distractor_strength < 0:
            raise ConfigError("noise_std and distractor_strength must be nonnegative")


# --------------------------------------------------------------------------
# texture families; parameters live in the cell's own (unrotated) frame


def _sample(family, rng):
    p = {"r": rng.uniform(16, 21), "b": rng.uniform(0.55, 0.85)}
    if family == "stripes":
        p["f"] = rng.uniform(0.16, 0.22)
        p["phase"] = rng.uniform(0, 2 * np.pi)
    elif family == "blobs":
        n = rng.integers(2, 5)
        p["centres"] = _points_in_disk(rng, n, 0.55 * p["r"])
        p["sigma"] = rng.uniform(2.5, 3.5)
    elif family == "dots":
        n = rng.integers(25, 41)
        p["centres"] = _points_in_disk(rng, n, 0.9 * p["r"])
        p["sigma"] = rng.uniform(0.8, 1.1)
    elif family == "annulus":
        p["width"] = rng.uniform(1.8, 2.6)
    elif family == "patch":
        angle = rng.uniform(0, 2 * np.pi)
        d = rng.uniform(0.45, 0.6) * p["r"]
        p["centre"] = (d * np.cos(angle), d * np.sin(angle))
        p["sigma"] = rng.uniform(3.0, 4.0)
    return p


def _points_in_disk(rng, n, radius):
    rad = radius * np.sqrt(rng.uniform(0, 1, n))
    ang = rng.uniform(0, 2 * np.pi, n)
    return np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)


def _gauss_sum(u, v, centres, sigma):
    d2 = (u[None] - centres[:, 0, None, None]) ** 2 + (v[None] - centres[:, 1, None, None]) ** 2
    return np.exp(-d2 / (2 * sigma * sigma)).sum(axis=0)


def _render(family, p, u, v):
    rad = np.hypot(u, v)
    disk = 1.0 / (1.0 + np.exp(np.clip(rad - p["r"], -50, 50)))
    b = p["b"]
    if family == "disk":
        return b * disk
    if family == "stripes":
        wave = 0.5 + 0.5 * np.sin(2 * np.pi * p["f"] * u + p["phase"])
        return b * disk * (0.15 + 0.85 * wave)
    if family == "blobs":
        return disk * (0.12 * b + b * np.minimum(_gauss_sum(u, v, p["centres"], p["sigma"]), 1.0))
    if family == "dots":
        return disk * (0.08 * b + b * np.minimum(_gauss_sum(u, v, p["centres"], p["sigma"]), 1.0))
    if family == "annulus":
        ring = np.exp(-((rad - p["r"] + p["width"]) ** 2) / (2 * p["width"] ** 2))
        return b * (0.1 * disk + ring)
    if family == "patch":
        cu, cv = p["centre"]
        blob = np.exp(-((u - cu) ** 2 + (v - cv) ** 2) / (2 * p["sigma"] ** 2))
        return disk * (0.1 * b + b * blob)
    raise ValueError(family)


def _frame(angle, dx, dy):
    axis = np.arange(SIDE) - (SIDE - 1) / 2.0
    y, x = np.meshgrid(axis - dy, axis - dx, indexing="ij")
    c, s = np.cos(angle), np.sin(angle)
    return c * x + s * y, -s * x + c * y


# --------------------------------------------------------------------------


def _specimen_cells(spec, cls, index):
    rho = spec.intra_specimen_correlation
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, cls, index]))
    family = FAMILIES[cls]
    own = _sample(family, rng)
    others = [f for f in FAMILIES[:spec.classes] if f != family] or [family]
    distractor_family = others[rng.integers(len(others))]
    distractor = _sample(distractor_family, rng)
    gain = 1.0 + rho * rng.uniform(-0.3, 0.3)
    sid = f"{CLASS_NAMES[cls]}-{index:03d}"
    cells = []
    for _ in range(spec.cells_per_specimen):
        fresh = _sample(family, rng)
        u, v = _frame(rng.uniform(0, 2 * np.pi), *rng.uniform(-spec.max_shift, spec.max_shift, 2))
        img = (1.0 - rho) * _render(family, fresh, u, v)
        if rho > 0:
            img = img + rho * _render(family, own, u, v)
            img = img + rho * spec.distractor_strength * _render(distractor_family, distractor, u, v)
        img = gain * img
        if spec.noise_std > 0:
            img = img + rng.normal(0.0, spec.noise_std, img.shape)
        cells.append(CellRecord(np.clip(img, 0.0, 1.0).astype(np.float32), cls, sid))
    return cells


def generate(spec):
    """All synthetic cells, grouped by class then specimen.

    Each specimen draws from its own seed stream, so the output does not
    depend on generation order.
    """
    out = []
    for cls in range(spec.classes):
        for index in range(spec.num_specimens_per_class):
            out.extend(_specimen_cells(spec, cls, index))
    return out


def write_dataset(spec, directory):
    """Generate and write PNG cells plus ``manifest.csv`` under ``directory``."""
    directory = Path(directory)
    records = generate(spec)
    manifest = write_manifest(records, directory / "manifest.csv")
    return records, manifest
