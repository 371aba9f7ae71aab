import numpy as np
import pytest

from hep2cnn.data.records import CellRecord, class_counts
from hep2cnn.errors import ConfigError, DataError, EvaluationError, LeakageError
from hep2cnn.evaluation import SplitPlan, plan_loso
from hep2cnn.nn import config as C
from hep2cnn.nn.checkpoint import load_checkpoint
from hep2cnn.nn.network import init_params, network_forward, params_equal
from hep2cnn.training import (
    Experiment,
    TrainConfig,
    average_vote,
    compose,
    ensemble_predict,
    ensemble_scores,
    fold_training_side,
    run_experiment,
    train,
)


def toy_images(n=100, seed=0):
    """Gaussian blobs (class 0) against vertical stripes (class 1)."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:60, 0:60].astype(np.float64)
    x = np.empty((n, 1, 60, 60), dtype=np.float32)
    y = np.arange(n) % 2
    for i in range(n):
        if y[i] == 0:
            cy, cx = rng.uniform(20, 40, 2)
            img = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * rng.uniform(5, 8) ** 2))
        else:
            img = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.1, 0.2) * xx + rng.uniform(0, 6.3))
        x[i, 0] = img + rng.normal(0, 0.05, img.shape)
    return x, y


TOY_NET = C.small_network(num_classes=2)
TOY_TCFG = TrainConfig.last_epochs(50, learning_rate=0.05, batch_size=20, init_std="fan_in")


@pytest.fixture(scope="module")
def toy_run():
    return train(TOY_NET, TOY_TCFG, toy_images())


def tiny_net(classes=2, side=8):
    return C.NetworkConfig((1, side, side), (C.conv(3, 3), C.RELU, C.maxpool(2), C.FLATTEN,
                                             C.fc(classes), C.SOFTMAX), num_classes=classes)


# ---------------------------------------------------------------- config


def test_train_config_defaults_and_validation():
    t = TrainConfig()
    assert (t.batch_size, t.epochs, t.learning_rate, t.checkpoint_epochs) == (200, 50, 0.002,
                                                                           (48, 49, 50))
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=10)
    assert TrainConfig.last_epochs(2).checkpoint_epochs == (1, 2)


# ---------------------------------------------------------------- training


def test_toy_set_is_learned(toy_run):
    assert len(toy_run.losses) == 50
    assert toy_run.accuracies[-1] >= 99.0
    assert sorted(toy_run.checkpoints) == [48, 49, 50]


def test_loss_non_increasing_in_windows_of_five(toy_run):
    means = [np.mean(toy_run.losses[s:s + 5]) for s in range(0, 50, 5)]
    assert all(b <= a for a, b in zip(means, means[1:])), means


def test_zero_learning_rate_keeps_init():
    x, y = toy_images(30)
    tcfg = TrainConfig.last_epochs(3, learning_rate=0.0, batch_size=7, seed=5)
    run = train(TOY_NET, tcfg, (x, y))
    assert params_equal(run.params, init_params(TOY_NET, 5))


def test_same_seed_same_losses():
    x, y = toy_images(30)
    tcfg = TrainConfig.last_epochs(3, learning_rate=0.05, batch_size=8, init_std="fan_in")
    a = train(TOY_NET, tcfg, (x, y))
    b = train(TOY_NET, tcfg, (x, y))
    assert a.losses == b.losses
    assert params_equal(a.params, b.params)
    c = train(TOY_NET, TrainConfig.last_epochs(3, learning_rate=0.05, batch_size=8,
                                               init_std="fan_in", seed=1), (x, y))
    assert c.losses != a.losses


def test_checkpoint_files(tmp_path):
    x, y = toy_images(10)
    tcfg = TrainConfig(epochs=3, checkpoint_epochs=(2, 3), batch_size=4)
    run = train(TOY_NET, tcfg, (x, y), checkpoint_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["epoch_002.h2nn", "epoch_003.h2nn"]
    assert params_equal(load_checkpoint(tmp_path / "epoch_003.h2nn", TOY_NET), run.checkpoints[3])


def test_training_input_errors():
    with pytest.raises(DataError):
        train(TOY_NET, TrainConfig(), [])
    with pytest.raises(DataError):
        train(TOY_NET, TrainConfig(), [CellRecord(np.zeros((8, 8)), 0, "s")])
    with pytest.raises(DataError):
        train(TOY_NET, TrainConfig(), [CellRecord(np.zeros((60, 60)), 4, "s")])


def test_time_budget_marks_incomplete():
    x, y = toy_images(10)
    run = train(TOY_NET, TrainConfig(epochs=3, checkpoint_epochs=(3,), time_budget=0.0), (x, y))
    assert not run.complete
    assert run.checkpoints == {}


# ---------------------------------------------------------------- ensembles


def test_average_vote_examples():
    label, mean = average_vote([[0.6, 0.4], [0.2, 0.8], [0.2, 0.8]])
    assert label == 1
    np.testing.assert_allclose(mean, [1 / 3, 2 / 3])
    label, mean = average_vote([[0.9, 0.1], [0.45, 0.55], [0.45, 0.55]])
    assert label == 0
    np.testing.assert_allclose(mean, [0.6, 0.4])


def test_average_vote_tie_goes_to_lowest_class():
    assert average_vote([[0.5, 0.5]])[0] == 0


def test_identical_checkpoints_match_single(toy_run):
    x, _ = toy_images(6, seed=9)
    p = toy_run.checkpoints[50]
    single, _ = network_forward(TOY_NET, p, x)
    triple = ensemble_scores(TOY_NET, [p, p, p], x)
    np.testing.assert_allclose(triple, single, rtol=1e-6)
    np.testing.assert_array_equal(ensemble_scores(TOY_NET, [p], x), single.astype(np.float64))
    for img, probs in zip(x, single):
        label, scores = ensemble_predict(TOY_NET, [p, p, p], img[0])
        assert label == int(np.argmax(probs))


def test_ensemble_rejects_incompatible_checkpoint():
    with pytest.raises(ConfigError):
        ensemble_predict(TOY_NET, [init_params(tiny_net(), 0)], np.zeros((60, 60)))
    with pytest.raises(ConfigError):
        ensemble_predict(TOY_NET, [], np.zeros((60, 60)))


# ---------------------------------------------------------------- experiments


def tiny_records(counts, cells=1):
    px = np.zeros((2, 2), dtype=np.float32)
    return [CellRecord(px, label, f"s{label}") for label, n in enumerate(counts)
            for _ in range(n * cells)]


def test_set2_composition_counts():
    exp = compose("set-2", tiny_records([2494, 2831, 2598, 2741, 2208, 724]))
    records, origins = fold_training_side(exp, range(len(exp.records)))
    assert class_counts(records) == [19952, 22648, 20784, 21928, 17664, 5792]
    assert len(origins) == len(records) == 108768


def test_set3_composition_keeps_extras_out_of_folds():
    t1 = [CellRecord(np.zeros((2, 2)), 0, f"a{i}") for i in range(3) for _ in range(50)]
    t2 = [CellRecord(np.zeros((2, 2)), 1, f"b{i}") for i in range(2) for _ in range(50)]
    exp = compose("set-3", t1, t2, per_specimen=41, seed=0)
    assert len(exp.records) == 123 and len(exp.extra_train) == 82
    assert {r.specimen_id for r in exp.records} == {"a0", "a1", "a2"}


def blob_stripe_records(specimens_per_class=1, cells=6, side=8):
    x, y = toy_images(2 * specimens_per_class * cells, seed=4)
    recs = []
    for i, (img, label) in enumerate(zip(x, y)):
        sid = f"{'AB'[label]}{(i // 2) % specimens_per_class}"
        recs.append(CellRecord(img[0], int(label), sid))
    return recs


FAST = TrainConfig.last_epochs(3, learning_rate=0.05, batch_size=4, init_std="fan_in")


def test_two_specimen_loso():
    exp = compose("set-1", blob_stripe_records())
    report = run_experiment(exp, tiny_net(), FAST, scheme="loso")
    assert len(report.fold_accuracies) == 2
    assert report.confusion.total == 12
    assert report.scheme == "loso"


def test_report_independent_of_parallelism():
    exp = compose("set-1", blob_stripe_records(2, 4))
    a = run_experiment(exp, tiny_net(), FAST, scheme="kfold", k=3, split_seed=2)
    b = run_experiment(exp, tiny_net(), FAST, scheme="kfold", k=3, split_seed=2, jobs=2)
    assert a.to_text() == b.to_text()
    assert a.confusion_csv() == b.confusion_csv()


def test_leakage_guard_rejects_test_index_in_training():
    recs = blob_stripe_records()
    exp = Experiment("bad", recs, augment="x8")
    bad = SplitPlan(((np.arange(12), np.array([0, 1])),), "kfold", k=2, seed=0)
    with pytest.raises(LeakageError):
        run_experiment(exp, tiny_net(), FAST, plan=bad)


def test_leakage_guard_rejects_shared_specimen_under_loso():
    recs = blob_stripe_records()
    extra = [CellRecord(np.zeros((8, 8), np.float32), 0, recs[0].specimen_id)]
    exp = Experiment("bad", recs, extra_train=extra)
    with pytest.raises(LeakageError, match=recs[0].specimen_id):
        run_experiment(exp, tiny_net(), FAST, plan=plan_loso(recs))


def test_time_budget_exhausted_everywhere():
    exp = compose("set-1", blob_stripe_records())
    tcfg = TrainConfig.last_epochs(3, time_budget=0.0)
    with pytest.raises(EvaluationError):
        run_experiment(exp, tiny_net(), tcfg)


def test_unknown_names():
    with pytest.raises(ConfigError):
        compose("set-4")
    exp = Experiment("x", blob_stripe_records(), augment="x5")
    with pytest.raises(ConfigError):
        run_experiment(exp, tiny_net(), FAST)
