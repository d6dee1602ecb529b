import numpy as np
import pytest

from iipad.cnn1d import (
    TEMPORAL_TRACE,
    AvgPool,
    Conv,
    Dense,
    Network,
    ReLU,
    Softmax,
    TrainConfig,
    Transpose,
    accuracy,
    backward_step,
    extract_feature,
    init_network,
    load_network,
    save_network,
    train,
)
from iipad.errors import FormatError, InvalidArgumentError, InvalidStateError, TrainingDivergedError

STEP = 1e-5


def rel_err(a, b):
    return float(np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12))


def numeric_grad(f, x):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + STEP
        up = f()
        x[i] = old - STEP
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * STEP)
    return g


LAYERS = {
    "conv3": lambda rng: Conv(rng.standard_normal((3, 2, 3)), rng.standard_normal(3), 1),
    "conv2": lambda rng: Conv(rng.standard_normal((3, 2, 2)), rng.standard_normal(3), 0),
    "conv1": lambda rng: Conv(rng.standard_normal((3, 2, 1)), rng.standard_normal(3), 0),
    "relu": lambda rng: ReLU(),
    "avgpool": lambda rng: AvgPool(),
    "transpose": lambda rng: Transpose(),
    "dense": lambda rng: Dense(rng.standard_normal((2, 2 * 7 * 8)), rng.standard_normal(2)),
}


@pytest.mark.parametrize("name", sorted(LAYERS))
def test_layer_gradients(name):
    rng = np.random.default_rng(0)
    layer = LAYERS[name](rng)
    x = rng.standard_normal((2, 7, 8))
    if name == "relu":
        x[np.abs(x) < 1e-3] = 0.5  # stay away from the kink
    y, _ = layer.forward(x)
    upstream = rng.standard_normal(y.shape)

    def f():
        return float(np.sum(upstream * layer.forward(x)[0]))

    _, cache = layer.forward(x)
    dx, grads = layer.backward(upstream, cache)
    assert rel_err(dx, numeric_grad(f, x)) < 1e-4
    for p, g in zip(layer.params, grads):
        assert rel_err(g, numeric_grad(f, p)) < 1e-4


def small_net(seed=0):
    rng = np.random.default_rng(seed)
    layers = [
        Conv(rng.standard_normal((3, 1, 3)), 0.1 * rng.standard_normal(3), 1),
        ReLU(),
        AvgPool(),
        Conv(rng.standard_normal((3, 3, 2)), 0.1 * rng.standard_normal(3), 0),
        ReLU(),
        Conv(rng.standard_normal((2, 3, 1)), 0.1 * rng.standard_normal(2), 0),
        Transpose(),
        Dense(rng.standard_normal((2, 2 * 3 * 8)), 0.1 * rng.standard_normal(2)),
        Softmax(),
    ]
    return Network(layers, (8, 8), dtype=np.float64)


@pytest.mark.parametrize("label", [0, 1])
def test_softmax_loss_gradient_through_truncated_net(label):
    net = small_net()
    h = np.random.default_rng(1).standard_normal((8, 8))
    _, grads = net.loss_and_grads(h, label)
    for p, g in zip(net.parameters(), grads):
        num = numeric_grad(lambda: net.loss_and_grads(h, label)[0], p)
        assert rel_err(g, num) < 1e-4


def test_layer_trace_and_output():
    net = init_network(0)
    assert net.temporal_trace() == TEMPORAL_TRACE
    assert net.shapes[-1] == (2,)
    assert all(l.weight.shape[2] in (1, 2, 3) for l in net.layers if isinstance(l, Conv))
    assert len(net.layers) == 21


def test_trace_violation_is_a_construction_error():
    with pytest.raises(InvalidStateError):
        init_network(0, frames=80)


def test_init_determinism_and_seed_sensitivity():
    a, b, c = init_network(3), init_network(3), init_network(4)
    for pa, pb in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(pa, pb)
    assert any(not np.array_equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters()))


def test_init_variance_matches_fan_in():
    net = init_network(5, dtype=np.float64)
    for layer in net.layers:
        if isinstance(layer, Conv) and layer.weight.size > 10_000:
            target = 2.0 / (layer.weight.shape[1] * layer.weight.shape[2])
            assert target / 3 < layer.weight.var() < 3 * target
            assert np.all(layer.bias == 0)
        if isinstance(layer, Dense):
            target = 1.0 / layer.weight.shape[1]
            assert target / 3 < layer.weight.var() < 3 * target


def test_zero_weights_give_even_odds():
    net = init_network(0)
    for p in net.parameters():
        p[...] = 0
    probs = net.predict(np.random.default_rng(0).random((75, 768)))
    np.testing.assert_array_equal(probs, [0.5, 0.5])


def test_softmax_sums_to_one():
    net = init_network(1)
    probs = net.predict(np.random.default_rng(1).random((75, 768)) / 100)
    assert abs(probs.sum() - 1) < 1e-12 and np.all((probs > 0) & (probs < 1))


def test_scaling_dense_layer_sharpens_probabilities():
    net = init_network(2)
    h = np.random.default_rng(2).random((75, 768))
    dense = net.layers[19]
    p1 = net.predict(h)
    top = p1.argmax()
    last = p1[top]
    for _ in range(3):
        dense.weight *= 2
        dense.bias *= 2
        p = net.predict(h)
        assert p.argmax() == top and p[top] >= last
        last = p[top]


def test_input_shape_checked():
    with pytest.raises(InvalidArgumentError):
        init_network(0).predict(np.zeros((74, 768)))


def test_zero_learning_rate_leaves_weights_unchanged():
    net = small_net()
    before = [p.copy() for p in net.parameters()]
    backward_step(net, [(np.ones((8, 8)), 1)], TrainConfig(learning_rate=0.0))
    for a, b in zip(before, net.parameters()):
        np.testing.assert_array_equal(a, b)


def test_weight_decay_factor():
    net = small_net()
    for layer in net.layers:
        if isinstance(layer, Dense):
            layer.weight[...] = 0  # the data gradient of every earlier layer vanishes
            layer.bias[...] = 0
    before = [p.copy() for p in net.parameters()]
    cfg = TrainConfig(learning_rate=0.1, momentum=0.0, weight_decay=0.5)
    backward_step(net, [(np.ones((8, 8)), 1)], cfg)
    for layer, (w0, b0) in zip(
        [l for l in net.layers if l.has_params and not isinstance(l, Dense)],
        zip(before[0::2], before[1::2]),
    ):
        np.testing.assert_allclose(layer.weight, w0 * (1 - 0.1 * 0.5), rtol=1e-14)
        np.testing.assert_array_equal(layer.bias, b0)


def test_repeated_steps_on_one_sample_decrease_loss():
    net = init_network(0)
    h = np.random.default_rng(3).random((75, 768)) / 50
    losses = []
    cfg = TrainConfig(learning_rate=1e-3, momentum=0.9, weight_decay=5e-4, batch_size=1)
    for _ in range(50):
        _, loss, _ = backward_step(net, [(h, 1)], cfg)
        losses.append(loss)
    assert all(b <= a + 1e-7 for a, b in zip(losses, losses[1:]))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_names_epoch_and_batch():
    net = small_net()
    with pytest.raises(TrainingDivergedError, match="epoch 7, batch 2"):
        backward_step(net, [(np.full((8, 8), np.inf), 1)], TrainConfig(), epoch=7, batch_index=2)


def separable_set(n=20, seed=0):
    rng = np.random.default_rng(seed)
    data = []
    for i in range(n):
        label = i % 2
        lo = 0 if label == 0 else 192
        h = np.zeros((75, 768))
        for c in range(3):
            idx = rng.integers(lo, lo + 64, size=(75, 500))
            for t in range(75):
                h[t, c * 256 : (c + 1) * 256] = np.bincount(idx[t], minlength=256) / 500
        data.append((h, label))
    return data


def test_single_class_rejected():
    data = [(np.zeros((8, 8)), 1)] * 3
    with pytest.raises(InvalidArgumentError):
        train(small_net(), data, TrainConfig())


def test_training_is_deterministic():
    data = [(np.random.default_rng(i).random((8, 8)), i % 2) for i in range(6)]
    cfg = TrainConfig(batch_size=2, epochs=3, seed=11)
    a = train(small_net(), data, cfg)
    b = train(small_net(), data, cfg)
    assert [r.train_loss for r in a.history] == [r.train_loss for r in b.history]
    for pa, pb in zip(a.network.parameters(), b.network.parameters()):
        np.testing.assert_array_equal(pa, pb)


def test_best_dev_selection_and_patience():
    data = [(np.random.default_rng(i).random((8, 8)), i % 2) for i in range(6)]
    dev = [(np.random.default_rng(50 + i).random((8, 8)), i % 2) for i in range(4)]
    result = train(small_net(), data, TrainConfig(batch_size=2, epochs=30, seed=1, patience=2), dev=dev)
    losses = [r.dev_loss for r in result.history]
    assert result.best_epoch == 1 + int(np.argmin(losses))
    assert len(losses) == 30 or len(losses) - result.best_epoch == 2


def test_feature_is_channel_mean_of_layer_18():
    net = init_network(0)
    h = np.random.default_rng(4).random((75, 768)) / 100
    out, _ = net.forward(h, stop=18)
    assert out.shape == (64, 1, 768)
    f = extract_feature(net, h)
    np.testing.assert_allclose(f.values, out.mean(0).ravel(), rtol=1e-6)
    assert f.values.shape == (768,)
    np.testing.assert_allclose(net.feature(h, "max"), out.max(0).ravel(), rtol=1e-6)


def test_feature_zero_when_layer_18_is_zero():
    net = init_network(0)
    net.layers[17].weight[...] = 0
    net.layers[17].bias[...] = 0
    assert np.all(net.feature(np.random.default_rng(0).random((75, 768))) == 0)


def test_feature_ignores_dense_layer_and_sees_input_changes():
    net = init_network(0)
    h = np.random.default_rng(5).random((75, 768)) / 100
    f0 = net.feature(h)
    net.layers[19].weight[...] = 123.0
    np.testing.assert_array_equal(net.feature(h), f0)
    h2 = h.copy()
    h2[40] += 1.0
    assert not np.array_equal(net.feature(h2), f0)


def test_checkpoint_round_trip_and_tampering(tmp_path):
    net = init_network(9, plane="XT")
    save_network(net, tmp_path / "n.iinn")
    again = load_network(tmp_path / "n.iinn")
    assert again.plane == "XT" and again.temporal_trace() == TEMPORAL_TRACE
    for a, b in zip(net.parameters(), again.parameters()):
        np.testing.assert_array_equal(a, b)
    save_network(again, tmp_path / "m.iinn")
    assert (tmp_path / "n.iinn").read_bytes() == (tmp_path / "m.iinn").read_bytes()
    raw = (tmp_path / "n.iinn").read_bytes()
    (tmp_path / "bad.iinn").write_bytes(b"NNII" + raw[4:])
    with pytest.raises(FormatError, match="bad.iinn"):
        load_network(tmp_path / "bad.iinn")
    (tmp_path / "short.iinn").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        load_network(tmp_path / "short.iinn")


def test_float64_mode():
    net = init_network(0, dtype=np.float64)
    assert all(p.dtype == np.float64 for p in net.parameters())
    assert net.predict(np.zeros((75, 768))).dtype == np.float64


@pytest.mark.slow
def test_separable_set_reaches_full_training_accuracy():
    data = separable_set()
    net = init_network(0)
    cfg = TrainConfig(learning_rate=1e-3, momentum=0.9, weight_decay=5e-4, batch_size=4, epochs=200, seed=0)
    result = train(net, data, cfg, on_epoch=lambda r: accuracy(net, data) == 1.0)
    assert accuracy(result.network, data) == 1.0
    assert len(result.history) <= 200


def test_shuffled_labels_baseline_is_logged():
    # sanity log only: with labels permuted there is nothing to learn
    rng = np.random.default_rng(12)
    data = [(rng.random((8, 8)), int(b)) for b in rng.permutation([0, 1] * 10)]
    result = train(small_net(), data, TrainConfig(batch_size=4, epochs=5, seed=2))
    accs = [round(r.train_accuracy, 2) for r in result.history]
    print(f"shuffled-label training accuracy per epoch: {accs}")
    assert len(accs) == 5 and all(0.0 <= a <= 1.0 for a in accs)
