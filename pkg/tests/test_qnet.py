import numpy as np
import pytest

from dqn_trader.qnet import (
    RMSProp,
    SGD,
    BackwardStateError,
    Conv3D,
    ConvSpec,
    Dense,
    QNetwork,
    ShapeError,
    conv_output_shape,
    load_checkpoint,
    make_optimizer,
    relu,
    save_checkpoint,
    sigmoid,
    sync_target,
)

SMALL = dict(
    input_shape=(12, 3, 9),
    conv_layers=("3x2x3:1x1x1:3", "3x2x3:2x1x1:4", "2x1x3:2x1x1:4"),
    fc_units=8,
)


def test_conv_spec_round_trip():
    spec = ConvSpec.parse("6x2x3:1x1x1:32")
    assert spec == ConvSpec((6, 2, 3), (1, 1, 1), 32)
    assert str(spec) == "6x2x3:1x1x1:32"
    for bad in ("6x2:1x1x1:3", "a:b:c", "6x2x3:0x1x1:3"):
        with pytest.raises(ValueError):
            ConvSpec.parse(bad)


def test_default_shape_chain():
    net = QNetwork()
    assert net.shapes() == [(25, 7, 7, 32), (11, 4, 4, 64), (5, 2, 2, 64), (1280,), (512,), (17,)]
    q = net.forward(np.random.default_rng(0).random((30, 8, 9)))
    assert q.shape == (17,)
    assert np.all((q > 0) & (q < 1))


def test_conv_output_shape_formula():
    assert conv_output_shape((30, 8, 9), (6, 2, 3), (1, 1, 1)) == (25, 7, 7)
    assert conv_output_shape((25, 7, 7), (5, 4, 4), (2, 1, 1)) == (11, 4, 4)
    with pytest.raises(ShapeError):
        conv_output_shape((4, 8, 9), (6, 2, 3), (1, 1, 1))


def test_shape_mismatch_errors():
    net = QNetwork(**SMALL)
    with pytest.raises(ShapeError):
        net.forward(np.zeros((11, 3, 9)))
    with pytest.raises(ShapeError):
        QNetwork(input_shape=(30, 2, 9))  # conv2 spans 4 assets


def test_zero_weights_give_zero_output():
    layer = Conv3D(1, ConvSpec((2, 2, 2), (1, 1, 1), 3), rng=np.random.default_rng(0))
    layer.weights[...] = 0
    out = layer.forward(np.random.default_rng(1).normal(size=(2, 4, 3, 3, 1)))
    assert out.shape == (2, 3, 2, 2, 3)
    assert np.all(out == 0)


def test_identity_filter_is_relu():
    layer = Conv3D(1, ConvSpec((1, 1, 1), (1, 1, 1), 1))
    layer.weights[...] = 1.0
    x = np.random.default_rng(2).normal(size=(3, 5, 4, 6, 1))
    np.testing.assert_array_equal(layer.forward(x), relu(x))
    np.testing.assert_array_equal(relu(relu(x)), relu(x))


def test_conv_matches_naive_loop():
    rng = np.random.default_rng(3)
    layer = Conv3D(2, ConvSpec((3, 2, 2), (2, 1, 2), 4), activation="linear", rng=rng)
    layer.biases[:] = rng.normal(size=4)
    x = rng.normal(size=(2, 9, 4, 7, 2))
    out = layer.forward(x)
    naive = np.zeros_like(out)
    for n in range(2):
        for d in range(out.shape[1]):
            for h in range(out.shape[2]):
                for w in range(out.shape[3]):
                    patch = x[n, 2 * d : 2 * d + 3, h : h + 2, 2 * w : 2 * w + 2, :]  # (3,2,2,C)
                    for f in range(4):
                        naive[n, d, h, w, f] = np.sum(patch * layer.weights[f].transpose(1, 2, 3, 0)) + layer.biases[f]
    np.testing.assert_allclose(out, naive, rtol=1e-12, atol=1e-12)


def test_sigmoid_is_stable():
    z = np.array([-1000.0, -1.0, 0.0, 1.0, 1000.0])
    s = sigmoid(z)
    assert np.all(np.isfinite(s))
    assert s[2] == 0.5 and s[0] == 0.0 and s[-1] == 1.0
    assert np.all((sigmoid(np.linspace(-30, 30, 61)) > 0) & (sigmoid(np.linspace(-30, 30, 61)) < 1))


def _rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8))


def _numeric_grad(f, p, h=1e-5):
    g = np.zeros_like(p)
    it = np.nditer(p, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = p[i]
        p[i] = old + h
        fp = f()
        p[i] = old - h
        fm = f()
        p[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


@pytest.mark.parametrize("activation", ["relu", "linear", "sigmoid"])
def test_dense_gradients(activation):
    rng = np.random.default_rng(4)
    layer = Dense(5, 3, activation, rng)
    x = rng.normal(size=(4, 5))
    up = rng.normal(size=(4, 3))

    def loss():
        return float(np.sum(layer.forward(x) * up))

    loss()
    dx, grads = layer.backward(up)
    for k, p in layer.params().items():
        assert _rel_err(grads[k], _numeric_grad(loss, p)) < 1e-4
    assert _rel_err(dx, _numeric_grad(loss, x)) < 1e-4


def test_conv_gradients():
    rng = np.random.default_rng(5)
    layer = Conv3D(2, ConvSpec((2, 2, 3), (2, 1, 2), 3), "relu", rng)
    layer.biases[:] = 0.1
    x = rng.normal(size=(2, 7, 3, 7, 2))
    up = rng.normal(size=(2, *layer.output_shape(x.shape[1:])))

    def loss():
        return float(np.sum(layer.forward(x) * up))

    loss()
    dx, grads = layer.backward(up)
    for k, p in layer.params().items():
        assert _rel_err(grads[k], _numeric_grad(loss, p)) < 1e-4
    assert _rel_err(dx, _numeric_grad(loss, x)) < 1e-4


@pytest.mark.parametrize("mode", ["sigmoid", "linear"])
def test_full_network_gradient_check(mode):
    net = QNetwork(**SMALL, output_activation=mode, seed=6)
    rng = np.random.default_rng(7)
    x = rng.random((3, 12, 3, 9))
    actions = np.array([0, 4, 6])
    targets = rng.random(3)

    def loss():
        q = net.forward(x)
        return float(np.mean(0.5 * (targets - q[np.arange(3), actions]) ** 2))

    q = net.forward(x)
    grads = net.backward(actions, targets - q[np.arange(3), actions])
    worst = max(_rel_err(grads[k], _numeric_grad(loss, p)) for k, p in net.params().items())
    assert worst < 1e-4


def test_zero_td_gives_zero_gradients():
    net = QNetwork(**SMALL)
    net.forward(np.random.default_rng(0).random((2, 12, 3, 9)))
    grads = net.backward([1, 2], [0.0, 0.0])
    assert all(np.all(g == 0) for g in grads.values())


def test_untouched_output_units_get_no_gradient():
    net = QNetwork(**SMALL)
    net.forward(np.random.default_rng(0).random((2, 12, 3, 9)))
    grads = net.backward([1, 1], [0.3, -0.2])
    others = [i for i in range(net.n_actions) if i != 1]
    assert np.all(grads["fc2.weights"][others] == 0)
    assert np.all(grads["fc2.biases"][others] == 0)
    assert np.any(grads["fc2.weights"][1] != 0)


def test_backward_without_forward():
    net = QNetwork(**SMALL)
    with pytest.raises(BackwardStateError):
        net.backward([0], [1.0])
    net.forward(np.zeros((12, 3, 9)))
    net.backward([0], [1.0])
    with pytest.raises(BackwardStateError):
        net.backward([0], [1.0])  # cache consumed


def test_determinism():
    x = np.random.default_rng(1).random((4, 12, 3, 9))
    a, b = QNetwork(**SMALL, seed=3), QNetwork(**SMALL, seed=3)
    assert a.forward(x).tobytes() == b.forward(x).tobytes()
    ga, gb = a.backward([0, 1, 2, 3], [0.1] * 4), b.backward([0, 1, 2, 3], [0.1] * 4)
    assert all(ga[k].tobytes() == gb[k].tobytes() for k in ga)
    assert QNetwork(**SMALL, seed=4).forward(x).tobytes() != a.forward(x).tobytes()


def test_single_block_equals_batch_row():
    net = QNetwork(**SMALL)
    x = np.random.default_rng(2).random((3, 12, 3, 9))
    np.testing.assert_allclose(net.forward(x[1]), net.forward(x)[1], rtol=1e-12)


def test_sgd_arithmetic():
    p = {"w": np.array([1.0])}
    SGD(0.1).step(p, {"w": np.array([0.5])})
    assert p["w"][0] == pytest.approx(0.95, abs=1e-15)
    SGD(0.1).step(p, {"w": np.array([0.0])})
    assert p["w"][0] == pytest.approx(0.95, abs=1e-15)


def test_rmsprop_monotone_motion_and_first_step():
    opt = RMSProp()
    p = {"w": np.array([1.0])}
    g = {"w": np.array([0.5])}
    trace = [1.0]
    for _ in range(50):
        opt.step(p, g)
        trace.append(p["w"][0])
    first = 0.00025 * 0.5 / np.sqrt(0.05 * 0.25 + 0.01)
    assert trace[0] - trace[1] == pytest.approx(first, rel=1e-12)
    steps = -np.diff(trace)
    assert np.all(steps > 0)
    assert np.all(np.diff(steps) <= 1e-18)  # running mean of g^2 grows, steps shrink toward lr*g/sqrt(g^2+eps)
    assert steps[-1] == pytest.approx(0.00025 * 0.5 / np.sqrt(0.25 * (1 - 0.95**50) + 0.01), rel=1e-9)


def test_optimizer_rejects_non_finite():
    for opt in (SGD(0.1), RMSProp()):
        with pytest.raises(FloatingPointError):
            opt.step({"w": np.ones(2)}, {"w": np.array([1.0, np.nan])})
    with pytest.raises(ValueError):
        make_optimizer("adam", 0.1)


def test_sync_copy_semantics():
    online = QNetwork(**SMALL, seed=1)
    target = QNetwork(**SMALL, seed=2)
    x = np.random.default_rng(0).random((2, 12, 3, 9))
    sync_target(online, target)
    np.testing.assert_array_equal(online.forward(x), target.forward(x))
    sync_target(online, target)
    np.testing.assert_array_equal(online.forward(x), target.forward(x))
    online.params()["fc2.biases"] += 1.0
    assert not np.array_equal(online.forward(x), target.forward(x))
    fresh = sync_target(online)
    np.testing.assert_array_equal(online.forward(x), fresh.forward(x))


def test_checkpoint_round_trip(tmp_path):
    net = QNetwork(**SMALL, output_activation="linear", seed=9)
    opt = RMSProp()
    x = np.random.default_rng(0).random((2, 12, 3, 9))
    q = net.forward(x)
    opt.step(net.params(), net.backward([0, 1], [0.5, 0.5]))
    path = save_checkpoint(tmp_path / "m.npz", net, opt, meta={"symbols": ["A", "B", "C"]})
    opt2 = RMSProp()
    back, header = load_checkpoint(path, opt2)
    assert header["meta"]["symbols"] == ["A", "B", "C"]
    assert header["architecture"] == net.architecture()
    assert back.forward(x).tobytes() == net.forward(x).tobytes()
    assert not np.array_equal(q, back.forward(x))
    assert opt2.sq.keys() == opt.sq.keys()


def test_checkpoint_rejects_foreign_file(tmp_path):
    np.savez(tmp_path / "x.npz", header=np.array('{"format": "other"}'))
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.npz")
