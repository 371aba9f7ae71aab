import struct

import numpy as np
import pytest

from hep2cnn.errors import ConfigError, DataError, InternalError
from hep2cnn.nn import checkpoint as ck
from hep2cnn.nn import config as C
from hep2cnn.nn import network as N
from hep2cnn.nn.layers import softmax_xent_forward
from oracles import rel_error


def test_default_network_shape_and_depth():
    cfg = C.default_network()
    assert cfg.input_shape == (1, 60, 60)
    assert cfg.num_classes == 6
    assert cfg.depth() == 10
    assert cfg.layers[-1].kind == "softmax"
    kernels = [s.kernel for s in cfg.layers if s.kind == "conv"]
    assert kernels.count((1, 1)) >= 3
    # relu follows every conv
    for i, s in enumerate(cfg.layers):
        if s.kind == "conv":
            assert cfg.layers[i + 1].kind == "relu"


def test_text_round_trip():
    cfg = C.default_network()
    again = C.parse_network(cfg.to_text())
    assert again == cfg
    assert again.digest() == cfg.digest()


def test_parser_reports_line_of_unknown_kind():
    text = "input channels=1 height=8 width=8\nclasses 2\n\nconv out=2 kernel=3\nlstm units=4\n"
    with pytest.raises(ConfigError, match="line 5"):
        C.parse_network(text)


@pytest.mark.parametrize("bad,line", [
    ("conv out=2", 3),
    ("conv out=2 kernel=3 dilation=2", 3),
    ("maxpool window=x", 3),
    ("conv out=2 kernel=3 pad=-1", 3),
])
def test_parser_rejects_bad_options(bad, line):
    text = f"input channels=1 height=8 width=8\nclasses 2\n{bad}\nflatten\nfc out=2\nsoftmax\n"
    with pytest.raises(ConfigError, match=f"line {line}"):
        C.parse_network(text)


def test_parser_accepts_rectangular_kernel():
    text = "input channels=1 height=6 width=6\nclasses 2\nconv out=2 kernel=3x1\nflatten\nfc out=2\nsoftmax\n"
    cfg = C.parse_network(text)
    assert cfg.layers[0].kernel == (3, 1)
    assert cfg.shapes[1] == (2, 4, 6)


def test_shape_validation_rejects_nonintegral_and_nonpositive():
    with pytest.raises(ConfigError, match="non-integral"):
        C.NetworkConfig((1, 7, 7), [C.maxpool(2), C.FLATTEN, C.fc(2), C.SOFTMAX], 2)
    with pytest.raises(ConfigError):
        C.NetworkConfig((1, 3, 3), [C.conv(2, 5), C.FLATTEN, C.fc(2), C.SOFTMAX], 2)
    with pytest.raises(ConfigError, match="softmax"):
        C.NetworkConfig((1, 4, 4), [C.FLATTEN, C.fc(3), C.SOFTMAX], 2)
    with pytest.raises(ConfigError, match="final layer"):
        C.NetworkConfig((1, 4, 4), [C.FLATTEN, C.fc(2)], 2)


def test_init_is_deterministic_and_biases_zero():
    cfg = C.default_network()
    a, b = N.init_params(cfg, 7), N.init_params(cfg, 7)
    assert N.params_equal(a, b)
    assert not N.params_equal(a, N.init_params(cfg, 8))
    for w, bias in a.values():
        assert not bias.any()
        assert np.abs(w).max() <= 1e-3 * np.sqrt(3) + 1e-12


def test_init_std_statistics():
    cfg = C.NetworkConfig((1, 60, 60), [C.FLATTEN, C.fc(30), C.fc(6), C.SOFTMAX], 6)
    w = np.concatenate([p[0].ravel() for p in N.init_params(cfg, 0).values()])
    assert w.size >= 100_000
    assert abs(w.std() - 1e-3) / 1e-3 < 0.05


def test_single_softmax_layer_reduces_to_xent(rng):
    cfg = C.NetworkConfig((6, 1, 1), [C.SOFTMAX], 6)
    x = rng.standard_normal((4, 6, 1, 1))
    labels = np.array([0, 5, 2, 2])
    probs, cache = N.network_forward(cfg, {}, x)
    loss, grads = N.network_backward(cfg, {}, cache, labels)
    ref_loss, ref_probs = softmax_xent_forward(x.reshape(4, 6), labels)
    assert loss == pytest.approx(ref_loss, abs=1e-12)
    np.testing.assert_allclose(probs, ref_probs)
    assert grads == {}


def test_probabilities_normalized(rng):
    cfg = C.default_network()
    params = N.he_params(cfg, 3)
    probs, _ = N.network_forward(cfg, params, rng.random((3, 1, 60, 60)) * 5)
    assert (probs >= 0).all()
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_forward_rejects_wrong_input_shape():
    cfg = C.default_network()
    with pytest.raises(ConfigError):
        N.network_forward(cfg, N.init_params(cfg, 0), np.zeros((1, 1, 59, 59)))


def test_gradients_cover_every_parameterized_layer(rng):
    cfg = C.small_network()
    params = N.init_params(cfg, 0, std="fan_in")
    loss, grads = N.loss_and_grads(cfg, params, rng.random((2, 1, 60, 60)), [1, 3])
    assert set(grads) == set(params)
    for i in params:
        assert grads[i][0].shape == params[i][0].shape
        assert grads[i][1].shape == params[i][1].shape


def test_small_network_gradient_check(rng):
    cfg = C.small_network()
    params = N.he_params(cfg, 5)
    x = rng.random((2, 1, 60, 60))
    y = np.array([2, 4])
    _, grads = N.loss_and_grads(cfg, params, x, y)
    errs = []
    for i in params:
        for k in (0, 1):
            arr = params[i][k]
            for _ in range(5):
                idx = tuple(int(rng.integers(s)) for s in arr.shape)
                old = arr[idx]
                arr[idx] = old + 1e-5
                fp = N.loss_and_grads(cfg, params, x, y)[0]
                arr[idx] = old - 1e-5
                fm = N.loss_and_grads(cfg, params, x, y)[0]
                arr[idx] = old
                errs.append(rel_error(grads[i][k][idx], (fp - fm) / 2e-5, floor=1e-7))
    assert max(errs) < 1e-3


def test_sgd_examples():
    p = {0: (np.array([1.0]), np.array([0.0]))}
    g = {0: (np.array([2.0]), np.array([0.0]))}
    new = N.sgd_step(p, g, 0.002)
    assert new[0][0][0] == pytest.approx(0.996, abs=1e-15)
    assert p[0][0][0] == 1.0  # input untouched
    zero = {0: (np.zeros(1), np.zeros(1))}
    assert N.params_equal(N.sgd_step(p, zero, 0.002), p)


def test_sgd_is_path_dependent_on_quadratic():
    # f(w) = w^2, gradient 2w; two sequential steps vs one step with the
    # starting gradient counted twice
    lr, w0 = 0.1, 1.0
    grad = lambda w: {0: (np.array([2 * w]), np.array([0.0]))}  # noqa: E731
    p = {0: (np.array([w0]), np.array([0.0]))}
    p1 = N.sgd_step(p, grad(w0), lr)
    p2 = N.sgd_step(p1, grad(p1[0][0][0]), lr)
    assert p2[0][0][0] == pytest.approx(0.64)
    doubled = N.sgd_step(p, {0: (np.array([4 * w0]), np.array([0.0]))}, lr)
    assert doubled[0][0][0] == pytest.approx(0.6)
    assert p2[0][0][0] != pytest.approx(doubled[0][0][0])


def test_sgd_shape_mismatch():
    p = {0: (np.zeros(2), np.zeros(1))}
    with pytest.raises(InternalError):
        N.sgd_step(p, {0: (np.zeros(3), np.zeros(1))}, 0.1)
    with pytest.raises(InternalError):
        N.sgd_step(p, {1: (np.zeros(2), np.zeros(1))}, 0.1)


def test_checkpoint_round_trip(tmp_path):
    cfg = C.small_network()
    params = N.init_params(cfg, 11, std="fan_in")
    path = tmp_path / "p.h2nn"
    ck.save_checkpoint(path, cfg, params)
    blob = path.read_bytes()
    assert blob[:4] == b"H2NN"
    assert struct.unpack("<I", blob[4:8])[0] == 1
    assert blob[8:40] == cfg.digest()
    n_values = sum(w.size + b.size for w, b in params.values())
    assert len(blob) == 40 + 4 * n_values
    # first payload value is the first weight of layer declaration order
    first = min(params)
    assert np.frombuffer(blob[40:44], "<f4")[0] == params[first][0].ravel()[0]
    assert N.params_equal(ck.load_checkpoint(path, cfg), params)


def test_checkpoint_refuses_other_config(tmp_path):
    path = tmp_path / "p.h2nn"
    ck.save_checkpoint(path, C.small_network(), N.init_params(C.small_network(), 0))
    with pytest.raises(ConfigError, match="different network"):
        ck.load_checkpoint(path, C.default_network())


def test_checkpoint_rejects_corruption(tmp_path):
    cfg = C.small_network()
    blob = ck.encode_checkpoint(cfg, N.init_params(cfg, 0))
    with pytest.raises(DataError, match="magic"):
        ck.decode_checkpoint(cfg, b"XXXX" + blob[4:])
    with pytest.raises(DataError, match="truncated"):
        ck.decode_checkpoint(cfg, blob[:-4])
    with pytest.raises(DataError, match="trailing"):
        ck.decode_checkpoint(cfg, blob + b"\0\0\0\0")
