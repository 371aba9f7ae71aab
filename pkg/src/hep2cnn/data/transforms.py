"""Resizing, dihedral transforms and the augmentation policies."""

import zlib

import numpy as np

from ..errors import ConfigError, DataError
from .records import CLASS_NAMES, label_id, parse_provenance, provenance_name

INPUT_SIDE = 60

# NuMem uses x4: the composition table's arithmetic (4363 -> 17452) rather
# than the "eight times" wording for the two rare classes.
TASK2_POLICY = {"Homogeneous": 2, "Speckled": 2, "Nucleolar": 2, "Centromere": 2,
                "NuMem": 4, "Golgi": 8}

_VARIANTS = {
    1: ((0, False),),
    2: ((0, False), (1, False)),
    4: ((0, False), (1, False), (2, False), (3, False)),
    8: tuple((k, False) for k in range(4)) + tuple((k, True) for k in range(4)),
}


def _axis_weights(n_in, n_out):
    # align-corners sampling: output ends map onto input ends
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.minimum(np.floor(pos).astype(int), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_array(pixels, side=INPUT_SIDE):
    """Bilinear resize of a square array to ``side`` x ``side``."""
    px = np.asarray(pixels)
    if px.ndim != 2 or px.shape[0] != px.shape[1]:
        raise DataError(f"resize needs a square image, got shape {px.shape}")
    n = px.shape[0]
    if n == side:
        return px.copy()
    lo, hi, t = _axis_weights(n, side)
    src = px.astype(np.float64)
    rows = src[lo] * (1 - t)[:, None] + src[hi] * t[:, None]
    out = rows[:, lo] * (1 - t)[None, :] + rows[:, hi] * t[None, :]
    # convex weights can overshoot the range by an ulp
    out = np.clip(out, src.min(), src.max())
    return out.astype(px.dtype if np.issubdtype(px.dtype, np.floating) else np.float32)


def resize_bilinear(cell, side=INPUT_SIDE):
    return cell.replace(pixels=resize_array(cell.pixels, side))


def _compose(cell, turns, mirror):
    """Apply rotation by ``turns`` quarter turns (counter-clockwise), then an
    optional left-right flip, tracking the accumulated dihedral element."""
    k, m = parse_provenance(cell.provenance)
    px = np.rot90(cell.pixels, turns)
    # rotating M R^k by q gives M R^(k-q)
    k = (k - turns) % 4 if m else (k + turns) % 4
    if mirror:
        px = np.fliplr(px)
        m = not m
    return cell.replace(pixels=np.ascontiguousarray(px), provenance=provenance_name(k, m))


def rotate(cell, quarter_turns):
    """Exact counter-clockwise rotation by a multiple of 90 degrees."""
    if quarter_turns not in (0, 1, 2, 3):
        raise DataError(f"quarter_turns must be 0..3, got {quarter_turns}")
    return _compose(cell, quarter_turns, False)


def mirror(cell):
    """Left-right flip."""
    return _compose(cell, 0, True)


def variants(cell, multiplier):
    return [_compose(cell, k, m) for k, m in _VARIANTS[multiplier]]


def augment_x8(records):
    """All eight dihedral variants of every record, record-major order."""
    return [v for r in records for v in variants(r, 8)]


def _resolve_policy(policy):
    resolved = {}
    for key, mult in policy.items():
        if mult not in _VARIANTS:
            raise ConfigError(f"multiplier for {key!r} must be one of 1, 2, 4, 8; got {mult}")
        resolved[label_id(key)] = mult
    return resolved


def augment_task2_policy(records, policy=None):
    """Class-dependent augmentation.

    x2 adds the 90 degree rotation, x4 all four rotations, x8 the four
    rotations and their mirror images. ``policy`` maps class names or ids
    to multipliers and must cover every class present.
    """
    resolved = _resolve_policy(TASK2_POLICY if policy is None else policy)
    out = []
    for r in records:
        if r.label not in resolved:
            raise ConfigError(f"class {CLASS_NAMES[r.label]} missing from augmentation policy")
        out.extend(variants(r, resolved[r.label]))
    return out


def specimen_seed(seed, specimen_id):
    """Per-specimen generator seed, independent of processing order."""
    return np.random.SeedSequence([int(seed), zlib.crc32(specimen_id.encode("utf-8"))])


def build_set3(task1, task2_specimens, per_specimen=41, seed=0):
    """Pool both datasets and keep up to ``per_specimen`` random cells of each
    specimen, sampled without replacement. Kept cells stay in input order."""
    if per_specimen < 1:
        raise ConfigError("per_specimen must be at least 1")
    groups = {}
    for idx, r in enumerate(list(task1) + list(task2_specimens)):
        groups.setdefault(r.specimen_id, []).append((idx, r))
    chosen = []
    for sid, members in groups.items():
        if len(members) <= per_specimen:
            chosen.extend(members)
            continue
        rng = np.random.default_rng(specimen_seed(seed, sid))
        pick = rng.choice(len(members), size=per_specimen, replace=False)
        chosen.extend(members[i] for i in sorted(pick))
    chosen.sort(key=lambda t: t[0])
    return [r for _, r in chosen]
