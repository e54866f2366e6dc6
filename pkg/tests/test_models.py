import warnings

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from tatk import autodiff as ad
from tatk.datasets import generate_arma, generate_hmm
from tatk.models import (MLP, RNN, Activation, LinearModel, TrainConfig, WhiteBoxRegressor,
                         accuracy, dumps_model, load_model, loads_model, save_model, train)


def test_output_shapes():
    x = np.zeros((4, 6, 3))
    rnn = RNN(3, 5, 2, task="binary")
    assert rnn.predict(x).shape == (4, 6, 2)
    assert rnn.predict(x[0]).shape == (6, 2)
    mlp = MLP([18, 7, 3], task="multiclass")
    assert mlp.predict(x).shape == (4, 3)
    np.testing.assert_allclose(mlp.predict(x).sum(axis=1), 1.0)
    assert LinearModel(np.ones((6, 3))).predict(x).shape == (4, 1)


def test_mlp_rejects_other_window_lengths():
    mlp = MLP([18, 4, 1])
    with pytest.raises(ad.ShapeError, match="fixed T"):
        mlp.predict(np.zeros((1, 5, 3)))


def test_rnn_is_causal():
    rng = np.random.default_rng(0)
    rnn = RNN(3, 8, 2, seed=1)
    x = rng.normal(size=(2, 10, 3))
    y = x.copy()
    y[:, 6:] += rng.normal(size=(2, 4, 3))
    a, b = rnn.predict(x), rnn.predict(y)
    assert np.array_equal(a[:, :6], b[:, :6])
    assert not np.array_equal(a[:, 6:], b[:, 6:])


def test_whitebox_gradient_is_twice_input_inside_window():
    batch, _, model = generate_arma(B=2, T=20, N=3, window=(5, 10), features=(1, 2), seed=3)
    x = ad.tensor(batch.inputs)
    out = model.final_output(x)
    (g,) = ad.grad(out, [x], np.ones(out.shape))
    expected = np.zeros_like(batch.inputs)
    expected[:, 5:10, 1:] = 2 * batch.inputs[:, 5:10, 1:]
    np.testing.assert_allclose(g, expected)


def test_whitebox_is_zero_when_window_is_zeroed():
    batch, _, model = generate_arma(B=3, T=20, N=2, window=(4, 8), features=(0,), seed=1)
    x = batch.inputs.copy()
    x[:, 4:8, 0] = 0.0
    assert np.all(model.predict(x)[:, -1] == 0.0)


def test_train_matches_logistic_regression_oracle():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(200, 1, 2))
    y = (X[:, 0, 0] + 0.5 * X[:, 0, 1] > 0).astype(int)
    oracle = LogisticRegression().fit(X[:, 0], y).score(X[:, 0], y)
    model = train(MLP([2, 8, 2], task="binary", seed=0), X, y,
                  TrainConfig(epochs=60, lr=0.5, batch_size=20, seed=0)).model
    acc = accuracy(model, X, y)
    assert oracle >= 0.95
    assert acc >= 0.95


def test_train_is_reproducible_and_leaves_input_untouched():
    batch, _ = generate_hmm(B=40, T=8, seed=0)
    model = RNN(3, 6, 2, task="binary", seed=0)
    before = {k: v.copy() for k, v in model.params.items()}
    cfg = TrainConfig(epochs=3, lr=0.3, batch_size=8, seed=4)
    r1 = train(model, batch.inputs, batch.labels, cfg)
    r2 = train(model, batch.inputs, batch.labels, cfg)
    assert r1.losses == r2.losses
    assert r1.model.fingerprint() == r2.model.fingerprint()
    assert all(np.array_equal(before[k], model.params[k]) for k in before)
    assert r1.losses[-1] < r1.losses[0]


def test_hmm_rnn_beats_majority_rate():
    train_b, _ = generate_hmm(B=200, T=30, seed=1)
    test_b, _ = generate_hmm(B=50, T=30, seed=2)
    model = train(RNN(3, 16, 2, task="binary", seed=0), train_b.inputs, train_b.labels,
                  TrainConfig(epochs=20, lr=0.5, seed=0)).model
    majority = max(test_b.labels.mean(), 1 - test_b.labels.mean())
    assert accuracy(model, test_b.inputs, test_b.labels) > majority


def test_train_config_validation():
    with pytest.raises(ValueError, match="epochs"):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError, match="learning rate"):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(loss="hinge")


def test_train_shape_errors():
    model = RNN(3, 4, 2, task="binary")
    x = np.zeros((5, 4, 3))
    with pytest.raises(ad.ShapeError):
        train(model, x, np.zeros((5, 3), dtype=int), TrainConfig(epochs=1))
    with pytest.raises(ad.ShapeError):
        train(model, x, np.zeros((4, 4), dtype=int), TrainConfig(epochs=1))
    with pytest.raises(ValueError, match="classification"):
        train(LinearModel(np.ones((4, 3))), x, np.zeros(5), TrainConfig(epochs=1))


def test_nan_loss_names_epoch():
    x = np.full((4, 1, 2), 1e200)
    with pytest.raises(FloatingPointError, match="epoch 0"), warnings.catch_warnings():
        warnings.simplefilter("ignore")
        train(LinearModel(np.ones((1, 2))), x, np.zeros(4), TrainConfig(epochs=2, loss="mse"))


def _random_net(rng, N, H):
    m = MLP([N, H, 1], activation="relu")
    m.params = {"W0": rng.uniform(-1, 1, (N, H)), "b0": rng.uniform(-1, 1, H),
                "W1": rng.uniform(-1, 1, (H, 1)), "b1": rng.uniform(-1, 1, 1)}
    return m


@pytest.mark.parametrize("H", [1, 4])
def test_swap_relu_to_softplus_gap_is_small(H):
    # each unit moves by at most ln2/beta, scaled once by the output weights
    rng = np.random.default_rng(0)
    N, beta = 3, 10.0
    probes = rng.uniform(-1, 1, size=(2000, 1, N))
    for _ in range(1000):
        m = _random_net(rng, N, H)
        s = m.swap_activations("relu", "softplus", beta)
        gap = float(np.max(np.abs(m.predict(probes) - s.predict(probes))))
        bound = np.log(2) / beta * np.abs(m.params["W1"]).sum()
        assert gap <= bound + 1e-12
        if H == 1:
            assert gap < 0.1


def test_swap_shares_parameters_and_keeps_original():
    m = MLP([6, 4, 4, 2], task="binary", seed=1)
    s = m.swap_activations("relu", "softplus", 2.0)
    assert [a.kind for a in m.activations] == ["relu", "relu"]
    assert [(a.kind, a.beta) for a in s.activations] == [("softplus", 2.0)] * 2
    assert all(s.params[k] is m.params[k] for k in m.params)


def test_swap_without_source_kind_warns_and_is_noop():
    rnn = RNN(2, 3, 2)
    x = np.random.default_rng(0).normal(size=(2, 4, 2))
    with pytest.warns(UserWarning, match="no-op"):
        s = rnn.swap_activations("relu", "softplus")
    assert np.array_equal(rnn.predict(x), s.predict(x))
    with pytest.raises(ValueError, match="unknown activation"):
        rnn.swap_activations("relu", "gelu")


def test_replace_activation_preserves_shapes():
    m = MLP([6, 5, 2], task="binary")
    r = m.replace_activation(0, Activation("tanh"))
    x = np.ones((3, 2, 3))
    assert r.predict(x).shape == m.predict(x).shape
    assert r.list_activations()[0].kind == "tanh"
    assert m.list_activations()[0].kind == "relu"
    with pytest.raises(ValueError):
        Activation("swish")


def test_whitebox_rejects_long_inputs():
    model = WhiteBoxRegressor(np.ones((5, 2)))
    with pytest.raises(ad.ShapeError):
        model.predict(np.zeros((1, 6, 2)))


# -- model files --------------------------------------------------------------

@pytest.mark.parametrize("make", [
    lambda: MLP([6, 4, 2], task="binary", seed=1).swap_activations("relu", "softplus", 3.0),
    lambda: RNN(3, 5, 2, seed=2),
    lambda: LinearModel(np.arange(6.0).reshape(3, 2), bias=0.5),
    lambda: WhiteBoxRegressor(np.eye(3)),
])
def test_model_file_round_trip(tmp_path, make):
    m = make()
    save_model(m, tmp_path / "m.tatk")
    r = load_model(tmp_path / "m.tatk")
    assert r.fingerprint() == m.fingerprint()
    assert r.descriptor() == m.descriptor()
    x = np.random.default_rng(0).normal(size=(2, 3, 2 if isinstance(m, (MLP, LinearModel)) else 3))
    assert np.array_equal(r.predict(x), m.predict(x))


def test_model_file_rejects_corruption():
    blob = dumps_model(RNN(2, 3, 2))
    with pytest.raises(ValueError, match="magic"):
        loads_model(b"XXXX" + blob[4:])
    with pytest.raises(ValueError, match="version"):
        loads_model(blob[:4] + (99).to_bytes(4, "little") + blob[8:])
    with pytest.raises(ValueError, match="trailing"):
        loads_model(blob + b"\0" * 8)
