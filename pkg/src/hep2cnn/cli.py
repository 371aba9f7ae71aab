"""Command-line entry point: ``hep2cnn <subcommand> ...``.

Exit status is 0 on success, 1 on a user or configuration error and 2 when
an internal invariant (including the leakage guard) fails. Artifacts go to
``--out`` (default ``$HEP2CNN_OUT``, else ``./hep2cnn-out``); a failed run
leaves its partial output under ``<out>/quarantine/``.
"""

import argparse
import csv
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data.extract import SpecimenImage, extract_cells
from .data.imageio import read_gray, read_mask
from .data.manifest import load_manifest, write_manifest
from .data.records import CLASS_NAMES, class_counts
from .data.transforms import TASK2_POLICY, augment_task2_policy, augment_x8, resize_bilinear
from .errors import DataError, Hep2Error, InternalError, LeakageError
from .evaluation import (
    ConfusionMatrix,
    EvalReport,
    make_plan,
    mca,
    parse_confusion_table,
    rates_from_table,
    render_confusion,
)
from .nn.checkpoint import load_checkpoint
from .nn.config import default_network, load_network, small_network
from .synthetic import SynthSpec, write_dataset
from .training import TrainConfig, compose, ensemble_scores, run_experiment, train

log = logging.getLogger("hep2cnn")

OUT_ENV = "HEP2CNN_OUT"
IMAGE_SUFFIXES = (".png", ".pgm", ".tif", ".tiff", ".bmp")


class UsageError(Hep2Error):
    pass


# --------------------------------------------------------------------------
# helpers


def _network(spec):
    if spec in (None, "default"):
        return default_network()
    if spec == "small":
        return small_network()
    return load_network(spec)


def _init_std(value):
    return value if value == "fan_in" else float(value)


def _train_config(args):
    epochs = args.epochs
    ckpt = args.checkpoint_epochs
    if ckpt:
        ckpt = tuple(int(v) for v in ckpt.split(","))
    else:
        ckpt = tuple(range(max(1, epochs - 2), epochs + 1))
    return TrainConfig(batch_size=args.batch_size, epochs=epochs, learning_rate=args.lr,
                       seed=args.seed, checkpoint_epochs=ckpt, init_std=_init_std(args.init_std),
                       time_budget=args.time_budget)


def _policy(text):
    if text in (None, "none"):
        return None
    if text in ("x8", "task2"):
        return text
    policy = {}
    for part in text.split(","):
        name, _, mult = part.partition("=")
        try:
            policy[name.strip()] = int(mult)
        except ValueError:
            raise UsageError(f"bad policy entry {part!r}; expected CLASS=MULT") from None
    return policy


def _apply_policy(records, policy):
    if policy is None:
        return list(records)
    if policy == "x8":
        return augment_x8(records)
    if policy == "task2":
        return augment_task2_policy(records, TASK2_POLICY)
    return augment_task2_policy(records, policy)


def _read_labels(path):
    labels = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#"):
                continue
            if lineno == 1 and row[0].strip().lower() in ("specimen_id", "specimen"):
                continue
            if len(row) < 2:
                raise DataError("expected specimen_id,label", path=path, line=lineno)
            labels[row[0].strip()] = row[1].strip()
    return labels


def _find_mask(masks, stem):
    for name in (stem, stem + "_Mask", stem + "_mask"):
        for suffix in IMAGE_SUFFIXES:
            cand = masks / (name + suffix)
            if cand.is_file():
                return cand
    raise DataError(f"no mask for specimen {stem}", path=masks)


def _summary(records):
    counts = class_counts(records)
    return " ".join(f"{n}={c}" for n, c in zip(CLASS_NAMES, counts)) + f" total={len(records)}"


# --------------------------------------------------------------------------
# subcommands; each writes only under ``stage``


def cmd_extract(args, stage):
    specimens = Path(args.specimens)
    masks = Path(args.masks)
    labels = _read_labels(args.labels or specimens / "labels.csv")
    images = sorted(p for p in specimens.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    records = []
    for img in images:
        sid = img.stem
        if sid not in labels:
            raise DataError(f"specimen {sid} has no label", path=img)
        spec = SpecimenImage(read_gray(img), sid, labels[sid])
        cells = extract_cells(spec, read_mask(_find_mask(masks, sid)), box=args.box)
        log.info("specimen %s: %d cells", sid, len(cells))
        records.extend(cells)
    if args.resize:
        records = [resize_bilinear(r, args.resize) for r in records]
    write_manifest(records, stage / "manifest.csv")
    print(f"extracted {_summary(records)}")


def cmd_augment(args, stage):
    records = load_manifest(args.manifest)
    out = _apply_policy(records, _policy(args.policy))
    write_manifest(out, stage / "manifest.csv")
    print(f"augmented {len(records)} -> {_summary(out)}")


def cmd_synth(args, stage):
    spec = SynthSpec(
        num_specimens_per_class=args.specimens_per_class,
        cells_per_specimen=args.cells_per_specimen,
        classes=args.classes,
        intra_specimen_correlation=args.correlation,
        noise_std=args.noise,
        seed=args.seed,
        distractor_strength=args.distractor,
    )
    records, _ = write_dataset(spec, stage)
    print(f"generated {_summary(records)}")


def cmd_split(args, stage):
    records = load_manifest(args.manifest)
    plan = make_plan(records, args.scheme, args.k, args.seed)
    (stage / "splits.json").write_text(plan.to_json(), encoding="utf-8")
    print(f"{plan.scheme}: {len(plan)} folds")


def cmd_train(args, stage):
    ncfg = _network(args.network)
    tcfg = _train_config(args)
    side = ncfg.input_shape[1]
    records = [r if r.side == side else resize_bilinear(r, side)
               for r in load_manifest(args.manifest)]
    (stage / "network.net").write_text(ncfg.to_text(), encoding="utf-8")
    run = train(ncfg, tcfg, records, checkpoint_dir=stage / "checkpoints")
    with open(stage / "history.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,loss,train_accuracy\n")
        for e, (loss, acc) in enumerate(zip(run.losses, run.accuracies), start=1):
            fh.write(f"{e},{loss!r},{acc!r}\n")
    print(f"trained {len(run.losses)} epochs; final loss {run.losses[-1]:.6f}"
          if run.losses else "training stopped before the first epoch finished")


def _load_experiment(path):
    path = Path(path)
    cfg = json.loads(path.read_text(encoding="utf-8"))
    allowed = {"name", "task1_manifest", "task2_manifest", "network", "train", "split",
               "augment", "extra_augment", "per_specimen", "set3_seed"}
    unknown = set(cfg) - allowed
    if unknown:
        raise UsageError(f"unknown experiment keys {sorted(unknown)}")
    return cfg, path.parent


def cmd_eval(args, stage):
    if args.confusion:
        matrix, names = parse_confusion_table(Path(args.confusion).read_text(encoding="utf-8"))
        rates, kind = rates_from_table(matrix, args.kind)
        names = names or tuple(CLASS_NAMES[:len(rates)])
        for n, r in zip(names, rates):
            print(f"ccr {n} {r:.2f}")
        print(f"MCA {mca(rates):.2f}")
        (stage / "mca.txt").write_text(f"kind {kind}\nmca {mca(rates):.2f}\n", encoding="utf-8")
        return
    if args.experiment:
        cfg, root = _load_experiment(args.experiment)
        ncfg = _network(cfg.get("network") if cfg.get("network") in (None, "default", "small")
                        else str(root / cfg["network"]))
        tkw = dict(cfg.get("train", {}))
        if "checkpoint_epochs" not in tkw and "epochs" in tkw:
            e = tkw["epochs"]
            tkw["checkpoint_epochs"] = tuple(range(max(1, e - 2), e + 1))
        if "init_std" in tkw:
            tkw["init_std"] = _init_std(tkw["init_std"])
        try:
            tcfg = TrainConfig(**tkw)
        except TypeError as exc:
            raise UsageError(f"bad train settings: {exc}") from None
        task1 = load_manifest(root / cfg["task1_manifest"])
        task2 = load_manifest(root / cfg["task2_manifest"]) if cfg.get("task2_manifest") else []
        exp = compose(cfg.get("name", "set-1"), task1, task2,
                      per_specimen=cfg.get("per_specimen", 41), seed=cfg.get("set3_seed", 0),
                      augment=_policy(cfg.get("augment")),
                      extra_augment=_policy(cfg.get("extra_augment")))
        split = cfg.get("split", {})
        report = run_experiment(exp, ncfg, tcfg, scheme=split.get("scheme", "loso"),
                                k=split.get("k", 5), split_seed=split.get("seed", 0),
                                jobs=args.jobs, out_dir=stage / "folds" if args.keep_checkpoints
                                else None)
    else:
        if not (args.manifest and args.checkpoints):
            raise UsageError("eval needs --confusion, --experiment, or --manifest with --checkpoints")
        ncfg = _network(args.network)
        side = ncfg.input_shape[1]
        records = [r if r.side == side else resize_bilinear(r, side)
                   for r in load_manifest(args.manifest)]
        ckpts = [load_checkpoint(p, ncfg) for p in args.checkpoints]
        batch = np.stack([r.pixels for r in records]).astype(np.float32)[:, None]
        pred = ensemble_scores(ncfg, ckpts, batch).argmax(axis=1)
        cm = ConfusionMatrix.from_pairs([r.label for r in records], pred, ncfg.num_classes)
        report = EvalReport(cm, (cm.overall_accuracy(),), "holdout")
    report.write(stage)
    sys.stdout.write(report.to_text())


def cmd_report(args, stage):
    source = Path(args.report)
    if source.is_dir():
        source = source / "confusion.csv"
    matrix, names = parse_confusion_table(source.read_text(encoding="utf-8"))
    cm = ConfusionMatrix(matrix.astype(np.int64), names)
    text = render_confusion(cm)
    rates = rates_from_table(matrix, "counts")[0]
    text += f"MCA {mca(rates):.2f}\n"
    (stage / "confusion_table.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


# --------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="hep2cnn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=os.environ.get(OUT_ENV, "hep2cnn-out"),
                        help=f"output directory (default ${OUT_ENV} or ./hep2cnn-out)")
    common.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--jobs", type=int, default=1, help="parallel folds")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="crop cells from specimen images")
    p.add_argument("--specimens", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--labels", help="CSV specimen_id,label (default <specimens>/labels.csv)")
    p.add_argument("--box", type=int, default=77)
    p.add_argument("--resize", type=int, default=0, help="also resize crops to this side")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("augment", parents=[common], help="apply an augmentation policy")
    p.add_argument("--manifest", required=True)
    p.add_argument("--policy", default="x8",
                   help="x8, task2, none, or CLASS=MULT,... with MULT in 1,2,4,8")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--specimens-per-class", type=int, default=8)
    p.add_argument("--cells-per-specimen", type=int, default=40)
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--correlation", type=float, default=0.0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--distractor", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", parents=[common], help="plan LOSO or k-fold splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scheme", choices=["loso", "kfold"], default="loso")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", parents=[common], help="train one network on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--network", help="network file, 'default' or 'small'")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.002)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-epochs", help="comma list (default: last three epochs)")
    p.add_argument("--init-std", default="0.001", help="weight std or 'fan_in'")
    p.add_argument("--time-budget", type=float, help="seconds before training aborts")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score a confusion table, a model, "
                       "or run a full experiment")
    p.add_argument("--confusion", help="confusion table (counts or row percentages)")
    p.add_argument("--kind", choices=["auto", "counts", "percent"], default="auto")
    p.add_argument("--experiment", help="experiment JSON file")
    p.add_argument("--keep-checkpoints", action="store_true")
    p.add_argument("--manifest")
    p.add_argument("--network")
    p.add_argument("--checkpoints", nargs="+")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="render a confusion matrix as percentages")
    p.add_argument("--report", required=True, help="report directory or confusion CSV")
    p.set_defaults(func=cmd_report)
    return parser


def _quarantine(out, stage, command):
    qroot = out / "quarantine"
    qroot.mkdir(parents=True, exist_ok=True)
    n = 0
    while (qroot / f"{command}-{n}").exists():
        n += 1
    shutil.move(str(stage), str(qroot / f"{command}-{n}"))
    return qroot / f"{command}-{n}"


def _publish(stage, out):
    for item in sorted(stage.iterdir()):
        dest = out / item.name
        if dest.is_dir():
            shutil.rmtree(dest)
        elif dest.exists():
            dest.unlink()
        shutil.move(str(item), str(dest))
    stage.rmdir()


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help/--version and 2 for usage errors
        return 0 if exc.code in (0, None) else 1

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    handlers = [logging.StreamHandler(sys.stderr),
                logging.FileHandler(out / f"{args.command}.log", mode="w", encoding="utf-8")]
    fmt = logging.Formatter("%(asctime)s %(levelname)s %(name)s %(message)s")
    for h in handlers:
        h.setFormatter(fmt)
    root = logging.getLogger("hep2cnn")
    root.handlers[:] = handlers
    root.setLevel(args.log_level)
    root.propagate = False

    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    log.info("config %s", json.dumps(resolved, sort_keys=True, default=str))

    stage = out / f".staging-{args.command}"
    if stage.exists():
        shutil.rmtree(stage)
    stage.mkdir(parents=True)
    try:
        return _run(args, out, stage)
    finally:
        for h in handlers:
            h.close()
        root.handlers[:] = []


def _run(args, out, stage):
    try:
        args.func(args, stage)
    except (LeakageError, InternalError) as exc:
        where = _quarantine(out, stage, args.command)
        log.error("invariant failure: %s (partial output in %s)", exc, where)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (Hep2Error, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        where = _quarantine(out, stage, args.command)
        log.error("%s (partial output in %s)", exc, where)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report any other failure as internal
        where = _quarantine(out, stage, args.command)
        log.exception("internal error (partial output in %s)", where)
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    _publish(stage, out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
