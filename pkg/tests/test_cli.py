import json
import subprocess
import sys
import time

import numpy as np
import pytest
from PIL import Image

from hep2cnn.cli import main
from hep2cnn.data.manifest import read_manifest
from tables import SET3_TABLE, table_text
from test_data import five_blob_mask


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def tree(root, skip_logs=True):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*"))
            if p.is_file() and not (skip_logs and p.suffix == ".log")}


def test_help_exits_zero(capsys):
    code, out, _ = run(capsys, "--help")
    assert code == 0 and "usage" in out
    assert run(capsys, "eval", "--help")[0] == 0


def test_unknown_flag_exits_one(capsys):
    code, _, err = run(capsys, "synth", "--frobnicate", "3")
    assert code == 1 and "unrecognized" in err


def test_console_script_exit_status(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hep2cnn.cli", "split", "--manifest",
                           tmp_path / "none.csv", "--out", tmp_path / "o"],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert "none.csv" in proc.stderr


def test_eval_confusion_prints_mca(tmp_path, capsys):
    table = tmp_path / "set3.csv"
    table.write_text(table_text(SET3_TABLE))
    code, out, _ = run(capsys, "eval", "--confusion", table, "--out", tmp_path / "o")
    assert code == 0
    assert "MCA 79.13" in out.splitlines()
    assert (tmp_path / "o" / "mca.txt").read_text() == "kind percent\nmca 79.13\n"
    assert not (tmp_path / "o" / ".staging-eval").exists()


def test_extract_five_blobs(tmp_path, capsys):
    specimens, masks = tmp_path / "specimens", tmp_path / "masks"
    specimens.mkdir()
    masks.mkdir()
    rng = np.random.default_rng(0)
    Image.fromarray(rng.integers(0, 256, (300, 300), dtype=np.uint8)).save(specimens / "sp1.png")
    Image.fromarray(five_blob_mask().astype(np.uint8) * 255).save(masks / "sp1_Mask.png")
    (specimens / "labels.csv").write_text("specimen_id,label\nsp1,Golgi\n")
    code, out, _ = run(capsys, "extract", "--specimens", specimens, "--masks", masks,
                       "--out", tmp_path / "o")
    assert code == 0, out
    manifest = read_manifest(tmp_path / "o" / "manifest.csv")
    assert len(manifest) == 4
    assert manifest.class_counts["Golgi"] == 4
    assert "total=4" in out


def test_failed_run_is_quarantined(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("relative_image_path,label_name,specimen_id,provenance\nx.png,Golgi,s\n")
    out = tmp_path / "o"
    code, _, err = run(capsys, "augment", "--manifest", bad, "--out", out)
    assert code == 1 and "line 2" in err
    assert (out / "quarantine" / "augment-0").is_dir()
    assert not (out / "manifest.csv").exists()
    assert run(capsys, "augment", "--manifest", bad, "--out", out)[0] == 1
    assert (out / "quarantine" / "augment-1").is_dir()
    assert "config" in (out / "augment.log").read_text()


def test_leakage_exits_two(tmp_path, capsys):
    data = tmp_path / "data"
    assert run(capsys, "synth", "--specimens-per-class", 1, "--cells-per-specimen", 2,
               "--classes", 2, "--out", data)[0] == 0
    exp = {"name": "custom", "task1_manifest": "data/manifest.csv",
           "task2_manifest": "data/manifest.csv", "network": "small",
           "train": {"epochs": 1, "batch_size": 4}}
    (tmp_path / "exp.json").write_text(json.dumps(exp))
    code, _, err = run(capsys, "eval", "--experiment", tmp_path / "exp.json",
                       "--out", tmp_path / "o")
    assert code == 2 and "specimen" in err
    assert (tmp_path / "o" / "quarantine" / "eval-0").is_dir()


def test_unknown_experiment_key_exits_one(tmp_path, capsys):
    (tmp_path / "exp.json").write_text(json.dumps({"task1_manifest": "m.csv", "epochz": 3}))
    code, _, err = run(capsys, "eval", "--experiment", tmp_path / "exp.json",
                       "--out", tmp_path / "o")
    assert code == 1 and "epochz" in err


def test_augment_and_split(tmp_path, capsys):
    data = tmp_path / "data"
    run(capsys, "synth", "--specimens-per-class", 2, "--cells-per-specimen", 3, "--out", data)
    code, out, _ = run(capsys, "augment", "--manifest", data / "manifest.csv",
                       "--policy", "task2", "--out", tmp_path / "aug")
    assert code == 0
    assert "Golgi=48" in out and "NuMem=24" in out and "total=120" in out
    code, out, _ = run(capsys, "split", "--manifest", data / "manifest.csv",
                       "--out", tmp_path / "sp")
    assert code == 0 and "loso: 12 folds" in out
    folds = json.loads((tmp_path / "sp" / "splits.json").read_text())["folds"]
    assert len(folds) == 12


def test_reruns_are_byte_identical(tmp_path, capsys):
    for name in ("a", "b"):
        out = tmp_path / name
        assert run(capsys, "synth", "--specimens-per-class", 1, "--cells-per-specimen", 4,
                   "--classes", 2, "--correlation", 0.5, "--seed", 3, "--out", out)[0] == 0
        assert run(capsys, "train", "--manifest", out / "manifest.csv", "--network", "small",
                   "--epochs", 2, "--batch-size", 3, "--lr", 0.01, "--out", out / "t")[0] == 0
    a, b = tree(tmp_path / "a"), tree(tmp_path / "b")
    assert a == b
    assert "t/checkpoints/epoch_002.h2nn" in a and "t/history.csv" in a


@pytest.mark.slow
def test_pipeline_smoke(tmp_path, capsys):
    start = time.monotonic()
    data = tmp_path / "data"
    assert run(capsys, "synth", "--out", data)[0] == 0
    assert run(capsys, "split", "--manifest", data / "manifest.csv", "--scheme", "kfold",
               "--out", tmp_path / "split")[0] == 0
    train_dir = tmp_path / "train"
    code, out, err = run(capsys, "train", "--manifest", data / "manifest.csv",
                         "--epochs", 2, "--out", train_dir)
    assert code == 0, err
    ckpts = sorted((train_dir / "checkpoints").glob("*.h2nn"))
    assert len(ckpts) == 2
    code, out, err = run(capsys, "eval", "--manifest", data / "manifest.csv",
                         "--network", train_dir / "network.net", "--checkpoints", *ckpts,
                         "--out", tmp_path / "eval")
    assert code == 0, err
    assert "mca " in out
    code, out, _ = run(capsys, "report", "--report", tmp_path / "eval", "--out", tmp_path / "rep")
    assert code == 0 and out.splitlines()[-1].startswith("MCA ")
    assert time.monotonic() - start < 300
