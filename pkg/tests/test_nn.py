import numpy as np
import pytest
from hypothesis import given, strategies as st

from gradcheck import ipd_renorm_grad_error, layer_norm_grad_errors, network_grad_errors, random_case
from rtf_forge import nn
from rtf_forge.errors import FormatError, NumericError, SizeError


def test_init_determinism_and_scale():
    a, b = nn.init_model([3, 8, 6], seed=4), nn.init_model([3, 8, 6], seed=4)
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)
    big = nn.init_model([1024, 128, 3], seed=0, renormalize=False)
    std = big.weights[0].std()
    assert big.weights[0].size >= 10**5
    assert 0.9 * np.sqrt(1 / 1024) <= std <= 1.1 * np.sqrt(1 / 1024)
    assert all(not b.any() for b in big.biases)


def test_zero_network_gives_degenerate_pairs():
    model = nn.init_model([3, 4, 9], seed=0)
    for p in model.params():
        p[...] = 0
    out = nn.forward(model, np.ones(3))
    np.testing.assert_array_equal(out, [0, 0, 0, 0, 0, 0, 1, 1, 1])


def test_hand_built_1_2_1_net():
    model = nn.MlpModel(
        [np.array([[1.0], [-2.0]]), np.array([[2.0, 3.0]])],
        [np.array([0.1, 0.2]), np.array([0.5])],
        [np.ones(2)],
        [np.zeros(2)],
        renormalize=False,
    )
    # z = [0.6, -0.8]; centred [0.7, -0.7]; variance 0.49; relu keeps the first unit
    inv = 1 / np.sqrt(0.49 + 1e-5)
    assert nn.forward(model, [0.5])[0] == pytest.approx(2 * 0.7 * inv + 0.5, abs=1e-12)


def test_identity_layer_passes_input_through():
    # one dense layer W = I, b = 0, no post-map (the output layer is affine)
    model = nn.MlpModel([np.eye(3), np.eye(3)], [np.zeros(3), np.zeros(3)], [np.ones(3)], [np.zeros(3)], False)
    lin_out = np.array([0.3, -1.2, 2.0]) @ model.weights[-1].T + model.biases[-1]
    np.testing.assert_array_equal(lin_out, [0.3, -1.2, 2.0])


def test_layer_norm_hand_values():
    np.testing.assert_allclose(nn.layer_norm([1.0, -1.0], 1.0, 0.0), [0.999995, -0.999995], atol=1e-6)
    exact = 1 / np.sqrt(1 + 1e-5)
    np.testing.assert_allclose(nn.layer_norm([1.0, -1.0], 1.0, 0.0), [exact, -exact], atol=1e-12)
    np.testing.assert_allclose(nn.layer_norm([1.0, -1.0], 2.0, 3.0), [4.99999, 1.00001], atol=1e-5)
    np.testing.assert_array_equal(nn.layer_norm([2.0, 2.0, 2.0], 1.0, 0.5), [0.5, 0.5, 0.5])
    with pytest.raises(SizeError):
        nn.layer_norm([1.0], 1.0, 0.0)


def test_perfect_prediction_has_zero_gradient():
    model, x, _ = random_case(1)
    grads, loss = nn.backward(model, x, nn.forward(model, x))
    assert loss == 0
    assert all(not np.any(g) for g in grads)


def test_scalar_loss_gradient_convention():
    # single 1-1 affine output on top of a frozen hidden layer; d(W^2 x^2)/dW = 2 W x^2 = 4
    model = nn.MlpModel([np.ones((2, 1)), np.array([[2.0, 0.0]])], [np.array([0.0, 0.0]), np.zeros(1)], [np.array([1.0, 1.0])], [np.array([1.0, 0.0])], False)
    # hidden output is relu(LN([1,1]) * [1,1] + [1,0]) = [1, 0], so the net is o = 2 * 1
    grads, loss = nn.backward(model, [[1.0]], [[0.0]])
    assert loss == pytest.approx(4.0)
    assert grads[4][0, 0] == pytest.approx(4.0)


@given(st.integers(0, 10_000))
def test_network_gradients_match_finite_differences(seed):
    model, x, y = random_case(seed)
    assert max(network_grad_errors(model, x, y)) < 1e-4


def test_gradients_without_renorm():
    model, x, y = random_case(7)
    assert max(network_grad_errors(model, x, y, post=False)) < 1e-4


@given(st.integers(0, 10_000))
def test_layer_norm_gradients(seed):
    assert max(layer_norm_grad_errors(seed)) < 1e-4


@given(st.integers(0, 10_000))
def test_ipd_renorm_gradients(seed):
    assert ipd_renorm_grad_error(seed) < 1e-4


def test_adam_first_step():
    p = [np.zeros(1)]
    state = nn.AdamState.zeros_like(p, lr=1e-3)
    nn.adam_step(state, p, [np.ones(1)])
    assert p[0][0] == pytest.approx(-1e-3 / (1 + 1e-8), abs=1e-15)
    assert p[0][0] == pytest.approx(-9.99999e-4, abs=1e-9)


def test_adam_zero_gradient_is_noop():
    p = [np.array([1.5, -2.0])]
    state = nn.AdamState.zeros_like(p)
    for _ in range(5):
        nn.adam_step(state, p, [np.zeros(2)])
    np.testing.assert_array_equal(p[0], [1.5, -2.0])


def test_adam_rejects_nan():
    p = [np.zeros(1)]
    with pytest.raises(NumericError):
        nn.adam_step(nn.AdamState.zeros_like(p), p, [np.array([np.nan])])


def test_toy_affine_convergence():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (2048, 1))
    dx = rng.uniform(-1, 1, (128, 1))
    model = nn.init_model([1, 8, 1], seed=0, renormalize=False)
    # layer norm over an affine map of a scalar is not exactly linear, so give it data
    cfg = nn.TrainConfig(batch_size=32, max_epochs=200, patience=200, learning_rate=1e-2, dtype="float64")
    res = nn.train(model, x, 2 * x + 1, dx, 2 * dx + 1, cfg)
    assert nn.mse(nn.forward(res.model, dx), 2 * dx + 1) < 1e-3


def test_early_stopping_returns_first_epoch():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(64, 2))
    model = nn.init_model([2, 4, 1], seed=0, renormalize=False)
    # training drags the output toward +1 while the dev target is -1
    cfg = nn.TrainConfig(batch_size=8, max_epochs=50, patience=5, learning_rate=1e-2, dtype="float64")
    res = nn.train(model, x, np.ones((64, 1)), x, -np.ones((64, 1)), cfg)
    devs = [h.dev_loss for h in res.history]
    assert all(b > a for a, b in zip(devs, devs[1:]))
    assert len(res.history) == 6
    assert res.best_epoch == 1
    assert nn.mse(nn.forward(res.model, x), -np.ones((64, 1))) == pytest.approx(devs[0], rel=1e-12)


def test_plateau_halving_and_floor():
    stop = nn.EarlyStopping(patience=10, lr=1e-3, lr_floor=2e-4)
    stop.update(1, 1.0)
    lrs = []
    for e in range(2, 9):
        stop.update(e, 2.0)
        lrs.append(stop.lr)
    assert lrs == [1e-3, 5e-4, 5e-4, 2.5e-4, 2.5e-4, 2e-4, 2e-4]


def test_training_is_deterministic():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(40, 3)), rng.normal(size=(40, 6))
    runs = []
    for _ in range(2):
        model = nn.init_model([3, 5, 6], seed=3)
        runs.append(nn.train(model, x, y, x[:10], y[:10], nn.TrainConfig(batch_size=8, max_epochs=4)))
    assert nn.history_rows(runs[0].history) == nn.history_rows(runs[1].history)


def test_min_steps_per_epoch():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(10, 2)), rng.normal(size=(10, 3))
    model = nn.init_model([2, 4, 3], seed=0)
    res = nn.train(model, x, y, x, y, nn.TrainConfig(batch_size=4, max_epochs=2, min_steps_per_epoch=7))
    assert len(res.history) == 2


def test_dev_best_snapshot_is_minimum():
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=(80, 3)), rng.normal(size=(80, 6))
    dx, dy = rng.normal(size=(20, 3)), rng.normal(size=(20, 6))
    model = nn.init_model([3, 8, 6], seed=1)
    res = nn.train(model, x, y, dx, dy, nn.TrainConfig(batch_size=16, max_epochs=15, dtype="float64"))
    best = nn.mse(nn.forward(res.model, dx), dy)
    assert best <= min(h.dev_loss for h in res.history) + 1e-12


def test_checkpoint_round_trip(tmp_path):
    model = nn.init_model([3, 5, 6], seed=9, dtype=np.float32)
    model.input_mean, model.input_scale = np.ones(3, np.float32), np.full(3, 2.0, np.float32)
    nn.save_model(model, tmp_path / "m.rtfm")
    back = nn.load_model(tmp_path / "m.rtfm")
    assert back.dtype == np.float32
    for p, q in zip(model.params(), back.params()):
        np.testing.assert_array_equal(p, q)
    np.testing.assert_array_equal(back.input_scale, model.input_scale)
    data = (tmp_path / "m.rtfm").read_bytes()
    (tmp_path / "cut.rtfm").write_bytes(data[:-5])
    with pytest.raises(FormatError):
        nn.load_model(tmp_path / "cut.rtfm")
