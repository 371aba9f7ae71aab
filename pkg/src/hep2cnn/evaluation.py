"""Split planning, confusion matrices, per-class rates and mean class accuracy."""

import io
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data.records import CLASS_NAMES
from .errors import ConfigError, DataError, EvaluationError


# --------------------------------------------------------------------------
# split plans


@dataclass(frozen=True, eq=False)
class SplitPlan:
    """Ordered (train, test) index-array pairs.

    ``scheme`` is ``"loso"`` or ``"kfold"``; for LOSO ``groups`` holds the
    held-out specimen of each fold.
    """

    folds: tuple
    scheme: str
    k: int = None
    seed: int = None
    groups: tuple = None

    def __len__(self):
        return len(self.folds)

    def to_json(self):
        data = {
            "scheme": self.scheme,
            "k": self.k,
            "seed": self.seed,
            "folds": [
                {
                    "group": None if self.groups is None else self.groups[i],
                    "train": [int(v) for v in tr],
                    "test": [int(v) for v in te],
                }
                for i, (tr, te) in enumerate(self.folds)
            ],
        }
        return json.dumps(data, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        folds = tuple(
            (np.array(f["train"], dtype=np.int64), np.array(f["test"], dtype=np.int64))
            for f in data["folds"]
        )
        groups = None
        if data["scheme"] == "loso":
            groups = tuple(f["group"] for f in data["folds"])
        return cls(folds, data["scheme"], data.get("k"), data.get("seed"), groups)


def plan_loso(records):
    """One fold per distinct specimen, in order of first appearance."""
    sids = [r.specimen_id for r in records]
    if not sids:
        raise ConfigError("cannot plan splits for an empty dataset")
    order = list(dict.fromkeys(sids))
    sids = np.array(sids, dtype=object)
    all_idx = np.arange(len(sids))
    folds = []
    for sid in order:
        test = sids == sid
        folds.append((all_idx[~test], all_idx[test]))
    return SplitPlan(tuple(folds), "loso", groups=tuple(order))


def plan_kfold(records, k=5, seed=0):
    """Record-level k-fold split that ignores specimen identity.

    A seeded permutation is cut into ``k`` contiguous blocks; the first
    ``n % k`` blocks get one extra record.
    """
    n = len(records)
    if k < 2 or k > n:
        raise ConfigError(f"k must lie in [2, {n}], got {k}")
    perm = np.random.default_rng(seed).permutation(n)
    sizes = [n // k + (1 if i < n % k else 0) for i in range(k)]
    folds = []
    start = 0
    for size in sizes:
        test = np.sort(perm[start:start + size])
        mask = np.ones(n, dtype=bool)
        mask[test] = False
        folds.append((np.flatnonzero(mask), test))
        start += size
    return SplitPlan(tuple(folds), "kfold", k=k, seed=seed)


def make_plan(records, scheme, k=5, seed=0):
    if scheme == "loso":
        return plan_loso(records)
    if scheme == "kfold":
        return plan_kfold(records, k, seed)
    raise ConfigError(f"unknown split scheme {scheme!r}")


def shared_specimens(records, train_idx, test_idx):
    """Specimen ids present on both sides of a fold."""
    train = {records[i].specimen_id for i in train_idx}
    return sorted(train & {records[i].specimen_id for i in test_idx})


# --------------------------------------------------------------------------
# confusion matrix and metrics


def _names(k):
    return CLASS_NAMES[:k] if k <= len(CLASS_NAMES) else tuple(f"class{i}" for i in range(k))


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""

    counts: np.ndarray
    class_names: tuple = field(default=None)

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise DataError(f"confusion matrix must be square, got {c.shape}")
        if (c < 0).any():
            raise DataError("confusion counts must be nonnegative")
        object.__setattr__(self, "counts", c)
        if self.class_names is None:
            object.__setattr__(self, "class_names", _names(c.shape[0]))

    @classmethod
    def empty(cls, k=len(CLASS_NAMES), class_names=None):
        return cls(np.zeros((k, k), dtype=np.int64), class_names)

    @classmethod
    def from_pairs(cls, true, pred, k=len(CLASS_NAMES), class_names=None):
        true = np.asarray(true, dtype=np.int64)
        pred = np.asarray(pred, dtype=np.int64)
        if true.shape != pred.shape:
            raise DataError("true and predicted label arrays differ in length")
        for arr in (true, pred):
            bad = np.flatnonzero((arr < 0) | (arr >= k))
            if bad.size:
                raise DataError(f"label {arr[bad[0]]} outside [0, {k})",
                                record_index=int(bad[0]))
        counts = np.zeros((k, k), dtype=np.int64)
        np.add.at(counts, (true, pred), 1)
        return cls(counts, class_names)

    @property
    def k(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return self.counts.sum()

    def __add__(self, other):
        if other.counts.shape != self.counts.shape:
            raise DataError("cannot add confusion matrices of different size")
        return ConfusionMatrix(self.counts + other.counts, self.class_names)

    def overall_accuracy(self):
        total = self.total
        return float(100.0 * np.trace(self.counts) / total) if total else float("nan")


def accumulate(cm, true_label, predicted_label):
    """New matrix with one more (true, predicted) observation."""
    for v in (true_label, predicted_label):
        if not 0 <= v < cm.k:
            raise DataError(f"label {v} outside [0, {cm.k})")
    counts = cm.counts.copy()
    counts[true_label, predicted_label] += 1
    return ConfusionMatrix(counts, cm.class_names)


def ccr(cm):
    """Per-class correct classification rates in percent."""
    rows = cm.counts.sum(axis=1)
    empty = np.flatnonzero(rows == 0)
    if empty.size:
        names = ", ".join(cm.class_names[i] for i in empty)
        raise EvaluationError(f"no test samples for class(es) {names}; MCA is undefined")
    return 100.0 * np.diag(cm.counts) / rows


def mca(cm_or_ccr):
    """Mean class accuracy: the unweighted mean of per-class rates (percent)."""
    if isinstance(cm_or_ccr, ConfusionMatrix):
        rates = ccr(cm_or_ccr)
    else:
        rates = np.asarray(cm_or_ccr, dtype=np.float64)
        if rates.ndim != 1 or rates.size == 0:
            raise EvaluationError("expected a non-empty vector of per-class rates")
    return float(np.mean(rates))


def row_percentages(cm):
    """Row-normalized table in percent; empty rows are NaN."""
    counts = cm.counts.astype(np.float64)
    rows = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(rows > 0, 100.0 * counts / rows, np.nan)


def _round_row(row, decimals):
    # largest-remainder rounding keeps each displayed row summing to 100
    scale = 10 ** decimals
    scaled = row * scale
    out = np.floor(scaled)
    short = int(round(100 * scale - out.sum()))
    if short > 0:
        order = np.argsort(-(scaled - out), kind="stable")
        out[order[:short]] += 1
    return out / scale


def render_confusion(cm, decimals=2):
    """Row percentages as display text; empty rows render as ``n/a``.

    Displayed rows are rounded so they add up to exactly 100.
    """
    table = row_percentages(cm)
    names = cm.class_names
    width = max(8, max(len(n) for n in names) + 1)
    lines = [" " * width + "".join(f"{n:>{width}}" for n in names)]
    for name, row in zip(names, table):
        if np.isnan(row).all():
            warnings.warn(f"class {name} has no test samples", stacklevel=2)
            cells = "".join(f"{'n/a':>{width}}" for _ in names)
        else:
            cells = "".join(f"{v:>{width}.{decimals}f}" for v in _round_row(row, decimals))
        lines.append(f"{name:<{width}}" + cells)
    return "\n".join(lines) + "\n"


def parse_confusion_table(text):
    """Read a delimiter-separated matrix, tolerating a header row and a
    leading column of class names. Returns (matrix, class_names or None)."""
    rows = []
    names = []
    header = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cells = [c.strip() for c in line.replace("\t", ",").replace(";", ",").split(",")]
        if len(cells) == 1:
            cells = line.split()
        try:
            rows.append([float(c) for c in cells])
            continue
        except ValueError:
            pass
        try:
            values = [float(c) for c in cells[1:]]
        except ValueError:
            if header is None and not rows:
                header = cells
                continue
            raise DataError(f"non-numeric confusion row: {raw!r}") from None
        names.append(cells[0])
        rows.append(values)
    if not rows:
        raise DataError("no confusion rows found")
    width = {len(r) for r in rows}
    if len(width) != 1 or width.pop() != len(rows):
        raise DataError("confusion rows do not form a square matrix")
    return np.array(rows), (tuple(names) if len(names) == len(rows) else None)


def rates_from_table(matrix, kind="auto"):
    """Per-class rates from a raw table.

    ``kind="counts"`` row-normalizes integer counts; ``kind="percent"`` reads
    the diagonal of an already row-normalized percentage table as-is (such
    tables are rounded, so renormalizing would shift the rates). ``auto``
    picks percent whenever any entry is non-integral.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if kind == "auto":
        kind = "counts" if np.all(matrix == np.round(matrix)) else "percent"
    if kind == "percent":
        return np.diag(matrix).copy(), kind
    if kind == "counts":
        cm = ConfusionMatrix(matrix.astype(np.int64))
        return ccr(cm), kind
    raise ConfigError(f"unknown table kind {kind!r}")


# --------------------------------------------------------------------------
# reports


@dataclass(frozen=True, eq=False)
class EvalReport:
    confusion: ConfusionMatrix
    fold_accuracies: tuple = ()
    scheme: str = ""
    incomplete_folds: tuple = ()

    @property
    def ccr_per_class(self):
        return ccr(self.confusion)

    @property
    def mca(self):
        return mca(self.confusion)

    def to_text(self):
        lines = [f"scheme {self.scheme}", f"folds {len(self.fold_accuracies)}"]
        lines.append(f"mca {self.mca:.2f}")
        lines.append(f"mca_full {self.mca!r}")
        for name, rate in zip(self.confusion.class_names, self.ccr_per_class):
            lines.append(f"ccr {name} {rate:.2f}")
        lines.append(f"overall_accuracy {self.confusion.overall_accuracy():.2f}")
        for i, acc in enumerate(self.fold_accuracies):
            lines.append(f"fold {i} accuracy {acc:.4f}")
        for i in self.incomplete_folds:
            lines.append(f"incomplete_fold {i}")
        return "\n".join(lines) + "\n"

    def confusion_csv(self):
        buf = io.StringIO()
        buf.write("true\\predicted," + ",".join(self.confusion.class_names) + "\n")
        for name, row in zip(self.confusion.class_names, self.confusion.counts):
            buf.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")
        return buf.getvalue()

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "report.txt").write_text(self.to_text(), encoding="utf-8")
        (directory / "confusion.csv").write_text(self.confusion_csv(), encoding="utf-8")
