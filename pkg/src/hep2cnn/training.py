"""Minibatch SGD training, late-epoch checkpoint ensembles and experiments."""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data.records import labels_of, stack_pixels
from .data.transforms import augment_task2_policy, augment_x8, build_set3, resize_bilinear
from .errors import ConfigError, DataError, EvaluationError, LeakageError
from .evaluation import ConfusionMatrix, EvalReport, make_plan
from .nn.checkpoint import save_checkpoint
from .nn.network import (
    DEFAULT_INIT_STD,
    check_params,
    copy_params,
    init_params,
    network_backward,
    network_forward,
    predict_proba,
    sgd_step,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 200
    epochs: int = 50
    learning_rate: float = 0.002
    seed: int = 0
    checkpoint_epochs: tuple = (48, 49, 50)
    init_std: float = DEFAULT_INIT_STD
    time_budget: float = None

    def __post_init__(self):
        object.__setattr__(self, "checkpoint_epochs",
                           tuple(sorted(set(int(e) for e in self.checkpoint_epochs))))
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be nonnegative")
        if not self.checkpoint_epochs:
            raise ConfigError("at least one checkpoint epoch is required")
        bad = [e for e in self.checkpoint_epochs if not 1 <= e <= self.epochs]
        if bad:
            raise ConfigError(f"checkpoint epochs {bad} outside [1, {self.epochs}]")

    @classmethod
    def last_epochs(cls, epochs, count=3, **kwargs):
        """Config that checkpoints the final ``count`` epochs."""
        first = max(1, epochs - count + 1)
        return cls(epochs=epochs, checkpoint_epochs=tuple(range(first, epochs + 1)), **kwargs)


@dataclass
class TrainRun:
    losses: list = field(default_factory=list)
    accuracies: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)
    params: dict = None
    complete: bool = True


def _as_arrays(config, trainset):
    if isinstance(trainset, tuple):
        x, y = trainset
        x = np.asarray(x)
        y = np.asarray(y, dtype=np.int64)
    else:
        trainset = list(trainset)
        if not trainset:
            raise DataError("training set is empty")
        side = config.input_shape[1:]
        for i, r in enumerate(trainset):
            if r.pixels.shape != side:
                raise DataError(f"cell is {r.pixels.shape}, network expects {side}",
                                record_index=i)
        x = stack_pixels(trainset)
        y = labels_of(trainset)
    if len(x) == 0:
        raise DataError("training set is empty")
    if x.shape[1:] != config.input_shape:
        raise DataError(f"training array shape {x.shape[1:]} != {config.input_shape}")
    bad = np.flatnonzero((y < 0) | (y >= config.num_classes))
    if bad.size:
        raise DataError(f"label {y[bad[0]]} outside [0, {config.num_classes})",
                        record_index=int(bad[0]))
    return np.ascontiguousarray(x, dtype=np.float32), y


def train(config, tcfg, trainset, params=None, checkpoint_dir=None):
    """Plain minibatch SGD on the mean cross-entropy loss.

    ``trainset`` is a list of records or an ``(x, y)`` pair of arrays. Every
    epoch draws a fresh permutation from ``(seed, epoch)``; the last short
    batch is kept. Parameters at the configured epochs are stored in
    ``TrainRun.checkpoints`` and, with ``checkpoint_dir``, written to disk.
    """
    x, y = _as_arrays(config, trainset)
    if params is None:
        params = init_params(config, tcfg.seed, std=tcfg.init_std)
    else:
        check_params(config, params)
    run = TrainRun()
    start = time.monotonic()
    n = len(x)
    for epoch in range(1, tcfg.epochs + 1):
        order = np.random.default_rng([tcfg.seed, epoch]).permutation(n)
        loss_sum = 0.0
        correct = 0
        for s in range(0, n, tcfg.batch_size):
            idx = order[s:s + tcfg.batch_size]
            probs, cache = network_forward(config, params, x[idx])
            loss, grads = network_backward(config, params, cache, y[idx])
            params = sgd_step(params, grads, tcfg.learning_rate)
            loss_sum += loss * len(idx)
            correct += int((probs.argmax(axis=1) == y[idx]).sum())
            if tcfg.time_budget is not None and time.monotonic() - start > tcfg.time_budget:
                run.complete = False
                run.params = params
                log.warning("time budget of %.1fs exhausted in epoch %d", tcfg.time_budget, epoch)
                return run
        run.losses.append(loss_sum / n)
        run.accuracies.append(100.0 * correct / n)
        log.debug("epoch %d loss %.6f acc %.2f", epoch, run.losses[-1], run.accuracies[-1])
        if epoch in tcfg.checkpoint_epochs:
            run.checkpoints[epoch] = copy_params(params)
            if checkpoint_dir is not None:
                Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
                save_checkpoint(Path(checkpoint_dir) / f"epoch_{epoch:03d}.h2nn", config, params)
    run.params = params
    return run


def ensemble_scores(config, checkpoints, batch):
    """Mean class-probability vectors over the checkpoints."""
    checkpoints = list(checkpoints)
    if not checkpoints:
        raise ConfigError("ensemble needs at least one checkpoint")
    for p in checkpoints:
        check_params(config, p)
    total = None
    for p in checkpoints:
        probs = predict_proba(config, p, batch).astype(np.float64)
        total = probs if total is None else total + probs
    return total / len(checkpoints)


def ensemble_predict(config, checkpoints, cell):
    """Classify one cell by the argmax of checkpoint-averaged scores.

    Ties go to the lowest class index.
    """
    px = cell.pixels if hasattr(cell, "pixels") else np.asarray(cell)
    scores = ensemble_scores(config, checkpoints, np.asarray(px, dtype=np.float32)[None, None])[0]
    return int(np.argmax(scores)), scores


def average_vote(score_vectors):
    """Averaged-score decision for precomputed per-checkpoint score vectors."""
    mean = np.mean(np.asarray(score_vectors, dtype=np.float64), axis=0)
    return int(np.argmax(mean)), mean


# --------------------------------------------------------------------------
# experiments


AUGMENTERS = {
    None: lambda recs: list(recs),
    "none": lambda recs: list(recs),
    "x8": augment_x8,
    "task2": augment_task2_policy,
}


def _augmenter(policy):
    if isinstance(policy, dict):
        return lambda recs: augment_task2_policy(recs, policy)
    try:
        return AUGMENTERS[policy]
    except KeyError:
        raise ConfigError(f"unknown augmentation policy {policy!r}") from None


@dataclass(frozen=True, eq=False)
class Experiment:
    """Evaluation records (split into folds), records that always join the
    training side, and the augmentation applied to each training side."""

    name: str
    records: list
    extra_train: list = ()
    augment: object = None
    extra_augment: object = None


def compose(name, task1=(), task2=(), per_specimen=41, seed=0, augment=None,
            extra_augment=None):
    """Build one of the named training-set compositions.

    ``set-1`` is Task-1 as is, ``set-2`` the same with x8 augmentation of the
    training side, ``set-3`` the per-specimen subsample of Task-1 pooled with
    Task-2 (Task-2 cells only ever train). ``custom`` splits ``task1`` and
    pools ``task2`` into training with the given policies.
    """
    task1, task2 = list(task1), list(task2)
    if name == "set-1":
        return Experiment(name, task1)
    if name == "set-2":
        return Experiment(name, task1, augment="x8")
    if name == "set-3":
        pooled = build_set3(task1, task2, per_specimen, seed)
        eval_ids = {r.specimen_id for r in task1}
        return Experiment(
            name,
            [r for r in pooled if r.specimen_id in eval_ids],
            [r for r in pooled if r.specimen_id not in eval_ids],
        )
    if name == "custom":
        return Experiment(name, task1, task2, augment, extra_augment)
    raise ConfigError(f"unknown experiment {name!r}")


def check_leakage(scheme, train_records, train_origins, test_records, test_idx):
    """Refuse a fold whose training side holds a test cell or a variant of one;
    under LOSO also refuse any shared specimen."""
    leaked = set(train_origins) & {int(i) for i in test_idx}
    if leaked:
        raise LeakageError(f"{len(leaked)} test record(s) or their variants in training, "
                           f"e.g. index {min(leaked)}")
    if scheme == "loso":
        test_ids = {r.specimen_id for r in test_records}
        shared = sorted(test_ids & {r.specimen_id for r in train_records})
        if shared:
            raise LeakageError(f"test specimen(s) {shared} present in training side")


def fold_training_side(exp, train_idx):
    """Training records of one fold plus, per record, the index of the
    evaluation record it was derived from (-1 for extra training records)."""
    augment = _augmenter(exp.augment)
    records, origins = [], []
    for i in train_idx:
        variants = augment([exp.records[i]])
        records.extend(variants)
        origins.extend([int(i)] * len(variants))
    extras = _augmenter(exp.extra_augment)(exp.extra_train)
    records.extend(extras)
    origins.extend([-1] * len(extras))
    return records, origins


def _run_fold(args):
    fold, exp, plan_scheme, train_idx, test_idx, ncfg, tcfg, out_dir = args
    train_records, origins = fold_training_side(exp, train_idx)
    test_records = [exp.records[i] for i in test_idx]
    check_leakage(plan_scheme, train_records, origins, test_records, test_idx)
    ckpt_dir = None if out_dir is None else Path(out_dir) / f"fold_{fold:03d}"
    run = train(ncfg, tcfg, train_records, checkpoint_dir=ckpt_dir)
    if not run.complete:
        return fold, None, None, run
    scores = ensemble_scores(ncfg, [run.checkpoints[e] for e in sorted(run.checkpoints)],
                             stack_pixels(test_records))
    return fold, labels_of(test_records), scores.argmax(axis=1), run


def _prepare(records, side):
    return [r if r.pixels.shape == (side, side) else resize_bilinear(r, side) for r in records]


def run_experiment(exp, ncfg, tcfg, scheme="loso", k=5, split_seed=0, jobs=1,
                   out_dir=None, plan=None):
    """Train one model per fold and pool the test predictions.

    Each fold trains from scratch on its own training side; augmentation is
    applied after splitting so no variant of a test cell reaches training.
    """
    side = ncfg.input_shape[1]
    exp = Experiment(exp.name, _prepare(exp.records, side), _prepare(exp.extra_train, side),
                     exp.augment, exp.extra_augment)
    if plan is None:
        plan = make_plan(exp.records, scheme, k, split_seed)
    tasks = [(i, exp, plan.scheme, tr, te, ncfg, tcfg, out_dir)
             for i, (tr, te) in enumerate(plan.folds)]
    log.info("experiment %s: %d records, %d extra, %d folds (%s)", exp.name,
             len(exp.records), len(exp.extra_train), len(plan), plan.scheme)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, tasks))
    else:
        results = [_run_fold(t) for t in tasks]
    results.sort(key=lambda r: r[0])
    cm = ConfusionMatrix.empty(ncfg.num_classes)
    fold_acc, incomplete = [], []
    for fold, true, pred, _ in results:
        if true is None:
            incomplete.append(fold)
            continue
        fold_cm = ConfusionMatrix.from_pairs(true, pred, ncfg.num_classes)
        cm = cm + fold_cm
        fold_acc.append(fold_cm.overall_accuracy())
        log.info("fold %d: %d test cells, accuracy %.2f", fold, len(true), fold_acc[-1])
    if not fold_acc:
        raise EvaluationError("no fold completed within the time budget")
    return EvalReport(cm, tuple(fold_acc), plan.scheme, tuple(incomplete))
