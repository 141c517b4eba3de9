import csv

import numpy as np
import pytest
from pydantic import ValidationError

from tiling_predictor.core import ops
from tiling_predictor.core.tensor import ModelGraph, Tape
from tiling_predictor.models.zoo import build_model
from tiling_predictor.training.adam import AdamState, TrainConfig, adam_step
from tiling_predictor.training.trainer import (
    BEST_CHECKPOINT,
    FINAL_CHECKPOINT,
    LOSS_CURVE,
    split_validation,
    train,
    validation_mse,
)
from tiling_predictor.utils.exceptions import DivergenceError, EmptyDatasetError, ShapeError


def test_first_adam_step_moves_by_learning_rate():
    graph = ModelGraph()
    theta = graph.add("theta", np.array([0.5, -0.25]))
    config = TrainConfig(learning_rate=0.1)
    g = np.array([2.0, -0.003])
    state = adam_step([theta], [g], AdamState.zeros([theta]), config)
    expected = np.array([0.5, -0.25]) - 0.1 * g / (np.abs(g) + config.epsilon)
    np.testing.assert_allclose(theta.data, expected, rtol=1e-12)
    assert state.step == 1
    np.testing.assert_allclose(state.m["theta"], 0.1 * g)
    np.testing.assert_allclose(state.v["theta"], 0.001 * g * g)


def test_adam_second_step_uses_bias_correction():
    graph = ModelGraph()
    theta = graph.add("theta", np.array([1.0]))
    config = TrainConfig(learning_rate=0.01)
    state = AdamState.zeros([theta])
    adam_step([theta], [np.array([1.0])], state, config)
    adam_step([theta], [np.array([3.0])], state, config)
    m = (0.9 * 0.1 * 1.0 + 0.1 * 3.0) / (1 - 0.9 ** 2)
    v = (0.999 * 0.001 * 1.0 + 0.001 * 9.0) / (1 - 0.999 ** 2)
    expected = 1.0 - 0.01 / (1.0 + config.epsilon) - 0.01 * m / (np.sqrt(v) + config.epsilon)
    assert theta.data[0] == pytest.approx(expected, rel=1e-12)


def test_missing_gradient_counts_as_zero():
    graph = ModelGraph()
    theta = graph.add("theta", np.array([0.5]))
    state = adam_step([theta], [None], AdamState.zeros([theta]), TrainConfig())
    assert state.step == 1
    assert theta.data[0] == 0.5


def test_non_finite_gradient_raises_and_leaves_parameters():
    graph = ModelGraph()
    theta = graph.add("theta", np.array([0.5, 0.5]))
    state = AdamState.zeros([theta])
    with pytest.raises(DivergenceError, match="theta"):
        adam_step([theta], [np.array([np.nan, 1.0])], state, TrainConfig())
    np.testing.assert_array_equal(theta.data, [0.5, 0.5])
    assert state.step == 0
    with pytest.raises(ShapeError):
        adam_step([theta], [np.zeros(3)], state, TrainConfig())


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValidationError):
        TrainConfig(validation_fraction=1.0)
    with pytest.raises(ValidationError):
        TrainConfig(momentum=0.5)


def test_single_small_step_lowers_the_batch_loss(tiling_model, world_dataset):
    model = tiling_model.to_precision("float64")
    histories, actions, targets = world_dataset.batch(range(8))
    histories, targets = histories.astype(np.float64), targets.astype(np.float64)
    params = model.parameters()

    def batch_loss():
        with Tape() as tape:
            loss = ops.mse_loss(model.forward(histories, actions.astype(np.float64)).frame, targets)
        return tape, loss

    tape, before = batch_loss()
    model.graph.zero_grad()
    tape.backward(before)
    adam_step(params, [p.grad for p in params], AdamState.zeros(params), TrainConfig(learning_rate=1e-5))
    _, after = batch_loss()
    assert after.item() < before.item()


def test_training_is_deterministic(tiling_config, world_dataset):
    config = TrainConfig(epochs=2, batch_size=8, learning_rate=1e-3, seed=4)
    a = build_model("sdf-tiling", tiling_config, seed=3)
    b = build_model("sdf-tiling", tiling_config, seed=3)
    ra = train(a, world_dataset, config)
    rb = train(b, world_dataset, config)
    assert ra.loss_curve == rb.loss_curve
    for pa, pb in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)


def test_training_writes_checkpoints_and_loss_curve(tiling_model, world_dataset, tmp_path):
    config = TrainConfig(epochs=3, batch_size=8, learning_rate=1e-3)
    result = train(tiling_model, world_dataset, config, out_dir=str(tmp_path))
    assert len(result.loss_curve) == 3
    assert len(result.validation_curve) == 3
    assert 1 <= result.best_epoch <= 3
    assert result.validation_curve[result.best_epoch - 1] == min(result.validation_curve)
    assert (tmp_path / FINAL_CHECKPOINT).exists()
    assert (tmp_path / BEST_CHECKPOINT).exists()
    with open(tmp_path / LOSS_CURVE) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["epoch", "mean_mse"]
    assert [int(r[0]) for r in rows[1:]] == [1, 2, 3]
    assert [float(r[1]) for r in rows[1:]] == result.loss_curve
    train_part, _ = split_validation(world_dataset, config.validation_fraction)
    assert result.optimizer.step == 3 * ((len(train_part) + 7) // 8)


def test_copy_baseline_loss_is_constant(world_dataset):
    model = build_model("copy", window=2, input_height=16, input_width=32)
    result = train(model, world_dataset, TrainConfig(epochs=3, batch_size=3, validation_fraction=0.0))
    assert len(result.loss_curve) == 3
    assert result.loss_curve[1] == pytest.approx(result.loss_curve[0], rel=1e-12)
    assert result.loss_curve[2] == pytest.approx(result.loss_curve[0], rel=1e-12)
    histories, _, targets = world_dataset.batch(range(len(world_dataset)))
    expected = np.mean((histories[..., -1:].astype(np.float64) - targets) ** 2)
    assert result.loss_curve[0] == pytest.approx(expected, rel=1e-12)
    assert result.validation_curve == []


def test_divergence_names_epoch_and_batch(tiling_model, world_dataset, tmp_path):
    tiling_model.graph["head.basis_weights"].data[0] = np.nan
    with pytest.raises(DivergenceError) as excinfo:
        train(tiling_model, world_dataset, TrainConfig(epochs=2), out_dir=str(tmp_path))
    assert excinfo.value.epoch == 1
    assert excinfo.value.batch == 1
    assert excinfo.value.exit_code == 3
    assert not (tmp_path / BEST_CHECKPOINT).exists()
    assert not (tmp_path / FINAL_CHECKPOINT).exists()


def test_empty_dataset_is_rejected(tiling_model, world_dataset):
    with pytest.raises(EmptyDatasetError):
        train(tiling_model, world_dataset.subset([]), TrainConfig())


def test_split_validation_takes_the_tail(world_dataset):
    train_part, held_out = split_validation(world_dataset, 0.1)
    n = len(world_dataset)
    assert len(train_part) + len(held_out) == n
    assert len(held_out) == max(int(n * 0.1), 1)
    assert held_out.locate(0) == world_dataset.locate(len(train_part))
    same, none = split_validation(world_dataset, 0.0)
    assert none is None and len(same) == n


def test_validation_mse_of_copy_matches_direct_computation(world_dataset):
    model = build_model("copy", window=2, input_height=16, input_width=32)
    histories, _, targets = world_dataset.batch(range(len(world_dataset)))
    expected = np.mean((histories[..., -1:].astype(np.float64) - targets) ** 2)
    assert validation_mse(model, world_dataset, batch_size=5) == pytest.approx(expected, rel=1e-9)
