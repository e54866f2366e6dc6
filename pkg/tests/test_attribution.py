import numpy as np
import pytest

from tatk import attribution as at
from tatk.attribution import (BaselineSpec, CausalModelRequired, augmented_occlusion,
                              integrated_gradients, nonlinearities_tunnel, occlusion,
                              read_attributions, temporal_integrated_gradients,
                              temporal_occlusion, time_forward_tunnel, write_attributions)
from tatk.models import MLP, RNN, LinearModel


def memoryless_rnn(w):
    """RNN whose output at ``t`` is ``<w, x_t>``."""
    N = len(w)
    m = RNN(N, N, 1, task="regression", activation="identity")
    m.params = {"W_x": np.eye(N), "W_h": np.zeros((N, N)), "b": np.zeros(N),
                "W_o": np.asarray(w, dtype=float)[:, None], "c": np.zeros(1)}
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# -- integrated gradients ----------------------------------------------------

def test_ig_is_zero_at_baseline(rng):
    model = MLP([6, 5, 1], seed=0)
    x = rng.normal(size=(3, 2))
    a = integrated_gradients(model, x, baseline=BaselineSpec("constant", 0.0), steps=8)
    np.testing.assert_array_equal(integrated_gradients(model, np.zeros((3, 2))).values, 0.0)
    assert a.values.shape == (3, 2)


def test_ig_on_linear_model_is_exact(rng):
    w = rng.normal(size=(4, 3))
    x = rng.normal(size=(4, 3))
    a = integrated_gradients(LinearModel(w, bias=2.0), x, baseline=1.5, steps=2)
    np.testing.assert_allclose(a.values, w * (x - 1.5), atol=1e-14)


def test_ig_target_out_of_range(rng):
    with pytest.raises(IndexError):
        integrated_gradients(MLP([4, 3, 2], task="binary"), rng.normal(size=(2, 2)), target=5)


def test_unknown_baseline_kind():
    with pytest.raises(ValueError):
        BaselineSpec("median")
    with pytest.raises(ValueError, match="background"):
        BaselineSpec("sample")


# -- temporal integrated gradients -------------------------------------------

def test_tig_on_memoryless_rnn(rng):
    w = np.array([0.5, -2.0, 1.0])
    x = rng.normal(size=(6, 3))
    a = temporal_integrated_gradients(memoryless_rnn(w), x, steps=4)
    np.testing.assert_allclose(a.values, w[None] * x, atol=1e-14)


def test_tig_and_tft_need_a_causal_model(rng):
    mlp = MLP([6, 4, 1])
    x = rng.normal(size=(3, 2))
    with pytest.raises(CausalModelRequired):
        temporal_integrated_gradients(mlp, x)
    with pytest.raises(CausalModelRequired):
        time_forward_tunnel(integrated_gradients, mlp, x)
    with pytest.raises(CausalModelRequired):
        temporal_occlusion(mlp, x)


def test_tig_temporal_mode_is_lower_triangular(rng):
    model = RNN(2, 4, 2, task="binary", seed=1)
    a = temporal_integrated_gradients(model, rng.normal(size=(5, 2)), steps=8, temporal=True)
    assert a.values.shape == (5, 5, 2)
    assert not a.values[np.triu_indices(5, k=1)].any()


def test_tig_per_time_is_normalized(rng):
    a = temporal_integrated_gradients(RNN(2, 3, 2, seed=0), rng.normal(size=(4, 2)), steps=8)
    expected = a.values.sum(axis=1) / np.linalg.norm(a.values)
    np.testing.assert_allclose(a.extras["per_time"], expected)


# -- time forward tunnel -----------------------------------------------------

def test_tft_with_one_step_equals_inner(rng):
    model = RNN(3, 4, 2, seed=2)
    x = rng.normal(size=(1, 3))
    inner = integrated_gradients(model, x, steps=16)
    tunnel = time_forward_tunnel(integrated_gradients, model, x, steps=16)
    assert np.array_equal(tunnel.values, inner.values)


def test_tft_temporal_rows_are_prefix_attributions(rng):
    model = RNN(2, 4, 2, seed=3)
    x = rng.normal(size=(4, 2))
    a = time_forward_tunnel(integrated_gradients, model, x, temporal=True, steps=8)
    assert not a.values[np.triu_indices(4, k=1)].any()
    t = 2
    inner = integrated_gradients(model, x[: t + 1], target=a.targets[t], steps=8)
    assert np.array_equal(a.values[t, : t + 1], inner.values)
    static = time_forward_tunnel(integrated_gradients, model, x, steps=8)
    assert np.array_equal(static.values, a.values[np.arange(4), np.arange(4)])


# -- occlusion ---------------------------------------------------------------

def test_occlusion_of_constant_model_is_zero(rng):
    model = LinearModel(np.zeros((3, 2)), bias=3.0)
    x = rng.normal(size=(3, 2))
    assert not occlusion(model, x).values.any()
    assert not augmented_occlusion(model, x, background=rng.normal(size=(4, 3, 2))).values.any()


def test_fixed_zero_occlusion_of_linear_model(rng):
    w = rng.normal(size=(3, 2))
    x = rng.normal(size=(3, 2))
    np.testing.assert_allclose(occlusion(LinearModel(w), x).values, w * x, atol=1e-14)


def test_augmented_occlusion_with_only_x_as_background(rng):
    # the bootstrap pools a feature over all times, so x is held constant in time
    model = MLP([6, 5, 1], seed=0)
    x = np.repeat(rng.normal(size=(1, 2)), 3, axis=0)
    a = augmented_occlusion(model, x, background=x[None], draws=7)
    np.testing.assert_allclose(a.values, 0.0, atol=1e-14)


def test_augmented_occlusion_needs_background(rng):
    with pytest.raises(ValueError, match="background"):
        augmented_occlusion(MLP([6, 5, 1]), rng.normal(size=(3, 2)))
    with pytest.raises(ValueError, match="strategy"):
        occlusion(MLP([6, 5, 1]), rng.normal(size=(3, 2)), strategy="sliding")


def test_temporal_occlusion_on_memoryless_rnn(rng):
    w = np.array([1.0, -3.0])
    x = rng.normal(size=(5, 2))
    np.testing.assert_allclose(temporal_occlusion(memoryless_rnn(w), x).values, w * x,
                               atol=1e-14)


# -- nonlinearities tunnel ---------------------------------------------------

def test_tunnel_without_relu_is_a_noop(rng):
    model = RNN(2, 3, 2, seed=0)
    x = rng.normal(size=(4, 2))
    a = nonlinearities_tunnel(integrated_gradients, model, x, steps=8)
    b = integrated_gradients(model, x, steps=8)
    assert np.array_equal(a.values, b.values)
    assert a.method == "nonlinearities_tunnel(integrated_gradients)"


def test_tunnel_on_linear_model_is_unchanged(rng):
    w = rng.normal(size=(3, 2))
    x = rng.normal(size=(3, 2))
    a = nonlinearities_tunnel(occlusion, LinearModel(w), x)
    assert np.array_equal(a.values, occlusion(LinearModel(w), x).values)


def test_tunnel_leaves_original_model_untouched(rng):
    model = MLP([6, 4, 1], seed=0)
    x = rng.normal(size=(3, 2))
    before = integrated_gradients(model, x, steps=8).values
    nonlinearities_tunnel(integrated_gradients, model, x, swaps=[("relu", "softplus", 5.0)],
                          steps=8)
    assert [a.kind for a in model.activations] == ["relu"]
    assert np.array_equal(integrated_gradients(model, x, steps=8).values, before)


# -- registry, determinism, files --------------------------------------------

def test_unknown_method_lists_available():
    with pytest.raises(KeyError, match="integrated_gradients"):
        at.get_method("fit")


@pytest.mark.parametrize("name", ["augmented_occlusion", "lime", "kernel_shap", "dynamask"])
def test_seeded_methods_are_reproducible(rng, name):
    model = MLP([6, 4, 1], seed=0)
    x = rng.normal(size=(3, 2))
    bg = rng.normal(size=(5, 3, 2))
    opts = {"augmented_occlusion": {"background": bg, "draws": 3},
            "lime": {"n_samples": 40}, "kernel_shap": {"n_samples": 40},
            "dynamask": {"epochs": 5, "bisection_steps": 2}}[name]
    f = at.get_method(name)
    a = f(model, x, seed=4, **opts)
    b = f(model, x, seed=4, **opts)
    assert np.array_equal(a.values, b.values)
    assert np.all(np.isfinite(a.values))


def test_attributions_round_trip(tmp_path, rng):
    model = RNN(2, 3, 2, seed=0)
    attrs = [time_forward_tunnel(integrated_gradients, model, rng.normal(size=(3, 2)),
                                 temporal=True, steps=4) for _ in range(2)]
    write_attributions(attrs, tmp_path, seed=9, model_hash="abc")
    values, meta = read_attributions(tmp_path)
    assert values.tobytes() == np.stack([a.values for a in attrs]).tobytes()
    assert meta["seed"] == 9 and meta["temporal"] and meta["options"]["steps"] == 4
    (tmp_path / "attributions.csv").unlink()
    with pytest.raises(FileNotFoundError, match="attributions.csv"):
        read_attributions(tmp_path)


def test_attribution_rejects_future_importance():
    v = np.zeros((2, 2, 1))
    v[0, 1, 0] = 1.0
    with pytest.raises(ValueError, match="future"):
        at.Attribution(v, "x")
    with pytest.raises(FloatingPointError):
        at.Attribution(np.array([[np.nan]]), "x")
