import numpy as np
import pytest

from tiling_predictor.core import ops
from tiling_predictor.core.gradcheck import check_gradients
from tiling_predictor.core.tensor import Tape, Tensor
from tiling_predictor.models.configs import ModelKind, make_config
from tiling_predictor.models.zoo import (
    build_model,
    clamp_frame,
    count_params,
    predict,
    rollout,
    tile_action,
)
from tiling_predictor.utils.exceptions import ConfigurationError, ShapeError


def tiling_count(window: int, d1: int, d2: int, nb: int) -> int:
    encoder = (36 * window * 64 + 64) + 2 * (36 * 64 * 64 + 64)
    decoder = (36 * 67 * d1 + d1) + (36 * d1 * d2 + d2) + (36 * d2 * nb + nb)
    return encoder + decoder + nb


@pytest.mark.parametrize(
    "overrides,expected",
    [
        ({"window": 4}, 958_400),
        ({"window": 16}, 986_048),
        ({"window": 4, "decoder_channels": (40, 40, 40)}, 516_160),
    ],
)
def test_sdf_tiling_parameter_counts(overrides, expected):
    model = build_model("sdf-tiling", **overrides)
    assert count_params(model) == expected
    config = model.config
    assert expected == tiling_count(config.window, *config.decoder_channels)


def test_sdf_tiling_parameter_names_and_head():
    model = build_model("sdf-tiling")
    names = model.graph.names()
    assert names[0] == "encoder.conv1.weight"
    assert names[-1] == "head.basis_weights"
    assert model.graph["head.basis_weights"].shape == (80,)
    assert model.graph["decoder.deconv1.weight"].shape == (6, 6, 67, 80)
    assert all(not np.any(model.graph[n].data) for n in names if n.endswith(".bias"))


def test_sdf_vector_count_matches_closed_form(vector_model):
    cfg = vector_model.config
    flat, hidden = cfg.flat_features, cfg.hidden_width
    encoder = (36 * 2 * 4 + 4) + 2 * (36 * 4 * 4 + 4)
    fc = (flat * hidden + hidden) + 2 * (hidden * hidden + hidden) + 3 * hidden + (hidden * flat + flat)
    decoder = 2 * (36 * 4 * 4 + 4) + (36 * 4 + 1)
    assert count_params(vector_model) == encoder + fc + decoder


@pytest.mark.slow
def test_sdf_vector_default_size_dwarfs_tiling():
    vector = build_model("sdf")
    assert count_params(vector) == 61_444_161
    assert count_params(vector) >= 30 * 958_400


def test_copy_model_has_no_parameters_and_ignores_action(rng):
    model = build_model("copy", window=3, input_height=16, input_width=32)
    history = rng.uniform(size=(16, 32, 3)).astype(np.float32)
    a = predict(model, history, np.array([1.0, -1.0, 0.5]))
    b = predict(model, history, np.array([-3.0, 2.0, 0.0]))
    assert count_params(model) == 0
    np.testing.assert_array_equal(a.frame, history[..., -1:])
    np.testing.assert_array_equal(a.frame, b.frame)
    assert a.basis is None


def test_prediction_is_weighted_sum_of_basis_images(tiling_model, rng):
    history = rng.uniform(size=(16, 32, 2)).astype(np.float32)
    result = predict(tiling_model, history, np.array([0.3, -1.2, 0.1], dtype=np.float32))
    assert result.basis.shape == (16, 32, 4)
    assert np.all(result.basis >= 0)
    recombined = np.einsum("hwc,c->hw", result.basis.astype(np.float64), result.basis_weights)
    np.testing.assert_allclose(result.frame[..., 0], recombined, atol=1e-5)
    ops_frame = ops.linear_combine(Tensor(result.basis[np.newaxis]), Tensor(result.basis_weights)).data[0]
    np.testing.assert_array_equal(result.frame, ops_frame)


def test_zero_parameters_give_zero_frame(tiling_model, rng):
    for p in tiling_model.parameters():
        p.data = np.zeros_like(p.data)
    result = predict(tiling_model, rng.uniform(size=(16, 32, 2)), np.ones(3))
    assert not np.any(result.frame)


def test_actions_change_predictions(tiling_model, vector_model, rng):
    history = rng.uniform(size=(16, 32, 2)).astype(np.float32)
    for model in (tiling_model, vector_model):
        a = predict(model, history, np.array([1.0, 1.0, 0.0])).frame
        b = predict(model, history, np.array([-1.0, -1.0, 1.0])).frame
        assert np.mean((a - b) ** 2) > 0


def test_zero_action_embedding_makes_vector_model_action_blind(vector_model, rng):
    vector_model.graph["action_embed.weight"].data[...] = 0.0
    history = rng.uniform(size=(16, 32, 2)).astype(np.float32)
    a = predict(vector_model, history, np.array([1.0, 1.0, 0.0])).frame
    b = predict(vector_model, history, np.array([-2.0, 0.5, 1.0])).frame
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("fixture", ["tiling_model", "vector_model"])
def test_output_depends_on_action(fixture, request, rng):
    model = request.getfixturevalue(fixture)
    histories = Tensor(rng.uniform(size=(2, 16, 32, 2)).astype(np.float32))
    actions = Tensor(rng.standard_normal((2, 3)).astype(np.float32))
    with Tape() as tape:
        out = model.forward(histories, actions).frame
        loss = ops.reduce_sum(out)
    tape.backward(loss)
    assert np.any(tape.gradient(actions) != 0)


def test_full_tiling_graph_passes_gradient_check(tiling_model, rng):
    model = tiling_model.to_precision("float64")
    histories = Tensor(rng.uniform(size=(2, 16, 32, 2)), dtype=np.float64)
    actions = Tensor(rng.standard_normal((2, 3)), dtype=np.float64)
    target = Tensor(rng.uniform(size=(2, 16, 32, 1)), dtype=np.float64)

    def loss_fn():
        return ops.mse_loss(model.forward(histories, actions).frame, target)

    error = check_gradients(loss_fn, model.parameters() + [actions], samples=50, eps=1e-6, seed=11)
    assert error < 1e-3


def test_tile_action_unbatched():
    tiled = tile_action(np.array([1.0, -1.0, 0.5]), 10, 20).data
    assert tiled.shape == (10, 20, 3)
    assert np.all(tiled == np.array([1.0, -1.0, 0.5], dtype=np.float32))
    assert not np.any(tile_action(np.zeros(3), 10, 20).data)


def test_predict_rejects_wrong_window(tiling_model):
    with pytest.raises(ShapeError):
        predict(tiling_model, np.zeros((16, 32, 3)), np.zeros(3))


def test_rollout_copy_repeats_last_frame(rng):
    model = build_model("copy", window=2, input_height=16, input_width=32)
    history = rng.uniform(size=(16, 32, 2)).astype(np.float32)
    frames = rollout(model, history, [np.zeros(3)] * 4)
    assert len(frames) == 4
    for frame in frames:
        np.testing.assert_array_equal(frame, history[..., -1:])


def test_rollout_feeds_predictions_back(tiling_model, rng):
    history = rng.uniform(size=(16, 32, 2)).astype(np.float32)
    actions = [rng.standard_normal(3).astype(np.float32) for _ in range(3)]
    frames = rollout(tiling_model, history, actions)
    first = clamp_frame(predict(tiling_model, history, actions[0]).frame)
    np.testing.assert_array_equal(frames[0], first)
    window = np.concatenate([history[..., 1:], frames[0]], axis=-1)
    second = clamp_frame(predict(tiling_model, window, actions[1]).frame)
    np.testing.assert_array_equal(frames[1], second)
    with pytest.raises(ConfigurationError):
        rollout(tiling_model, history, [])


@pytest.mark.parametrize(
    "overrides",
    [
        {"decoder_channels": (80, 80, 81)},
        {"input_height": 84},
        {"window": 0},
        {"kernel": 5},
        {"unknown_field": 1},
    ],
)
def test_invalid_configs_are_rejected(overrides):
    with pytest.raises(ConfigurationError) as excinfo:
        make_config(ModelKind.SDF_TILING, **overrides)
    assert excinfo.value.errors


def test_model_kind_values():
    assert [k.value for k in ModelKind] == ["sdf-tiling", "sdf", "copy"]
