import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiling_predictor.core import ops
from tiling_predictor.core.gradcheck import check_gradients, relative_error
from tiling_predictor.core.tensor import ModelGraph, Parameter, Tape, Tensor, active_tape
from tiling_predictor.utils.exceptions import ConfigurationError, GradientError, ShapeError

TOL = 1e-3


def t64(rng, *shape, scale=1.0):
    return Tensor(scale * rng.standard_normal(shape), dtype=np.float64)


def weighted_sum(out: Tensor, seed: int = 7) -> Tensor:
    """Scalar projection with non-uniform output weights."""
    projection = Tensor(np.random.default_rng(seed).standard_normal(out.shape), dtype=out.dtype)
    return ops.reduce_sum(ops.multiply(out, projection))


def test_conv2d_output_shape():
    x = Tensor(np.zeros((2, 80, 160, 4)))
    w = Tensor(np.zeros((6, 6, 4, 64)))
    assert ops.conv2d(x, w, None).shape == (2, 40, 80, 64)
    assert ops.conv_output_size(10, 6, 2, 2) == 5
    assert ops.deconv_output_size(10, 6, 2, 2) == 20


def test_conv2d_matches_direct_sum(rng):
    x = t64(rng, 1, 6, 6, 2)
    w = t64(rng, 3, 3, 2, 3)
    b = t64(rng, 3)
    out = ops.conv2d(x, w, b, stride=1, padding=1).data
    padded = np.pad(x.data, ((0, 0), (1, 1), (1, 1), (0, 0)))
    expected = np.zeros((1, 6, 6, 3))
    for h in range(6):
        for v in range(6):
            patch = padded[0, h:h + 3, v:v + 3, :]
            expected[0, h, v] = np.tensordot(patch, w.data, axes=([0, 1, 2], [0, 1, 2])) + b.data
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_deconv_is_adjoint_of_conv(rng):
    x = t64(rng, 2, 8, 12, 3)
    w = t64(rng, 6, 6, 5, 3)
    y = t64(rng, 2, 4, 6, 5)
    forward = ops.conv2d(x, Tensor(np.ascontiguousarray(w.data.swapaxes(2, 3))), None)
    lhs = np.sum(forward.data * y.data)
    rhs = np.sum(x.data * ops.deconv2d(y, w, None).data)
    assert abs(lhs - rhs) < 1e-9 * max(1.0, abs(lhs))


def test_deconv_channel_mismatch_names_shapes():
    with pytest.raises(ShapeError) as excinfo:
        ops.deconv2d(Tensor(np.zeros((1, 10, 20, 67))), Tensor(np.zeros((6, 6, 64, 80))), None)
    assert "(1, 10, 20, 67)" in str(excinfo.value)
    assert "(6, 6, 64, 80)" in str(excinfo.value)


@pytest.mark.parametrize("stride,padding", [(2, 2), (1, 1)])
def test_conv2d_gradients(rng, stride, padding):
    x, w, b = t64(rng, 2, 8, 8, 3), t64(rng, 6 if stride == 2 else 3, 6 if stride == 2 else 3, 3, 4), t64(rng, 4)
    error = check_gradients(lambda: weighted_sum(ops.conv2d(x, w, b, stride, padding)), [x, w, b])
    assert error < TOL


def test_deconv2d_gradients(rng):
    x, w, b = t64(rng, 2, 3, 4, 3), t64(rng, 6, 6, 3, 2), t64(rng, 2)
    error = check_gradients(lambda: weighted_sum(ops.deconv2d(x, w, b)), [x, w, b])
    assert error < TOL


def test_elementwise_gradients(rng):
    a, b = t64(rng, 2, 4, 5, 3), t64(rng, 2, 4, 5, 3)
    assert check_gradients(lambda: weighted_sum(ops.relu(a)), [a]) < TOL
    assert check_gradients(lambda: weighted_sum(ops.add(a, b)), [a, b]) < TOL
    assert check_gradients(lambda: weighted_sum(ops.multiply(a, b)), [a, b]) < TOL
    assert check_gradients(lambda: weighted_sum(ops.concat_channels(a, b)), [a, b]) < TOL
    assert check_gradients(lambda: weighted_sum(ops.sum_channels(a)), [a]) < TOL
    assert check_gradients(lambda: weighted_sum(ops.softmax_channels(a)), [a]) < TOL
    assert check_gradients(lambda: weighted_sum(ops.reshape(a, (2, 60))), [a]) < TOL


def test_linear_combine_and_mse_gradients(rng):
    basis, weights = t64(rng, 2, 4, 5, 6), t64(rng, 6)
    target = t64(rng, 2, 4, 5, 1)
    error = check_gradients(lambda: ops.mse_loss(ops.linear_combine(basis, weights), target),
                            [basis, weights, target])
    assert error < TOL


def test_dense_tile_and_padding_gradients(rng):
    x, w, b = t64(rng, 3, 5), t64(rng, 5, 4), t64(rng, 4)
    assert check_gradients(lambda: weighted_sum(ops.dense(x, w, b)), [x, w, b]) < TOL
    v = t64(rng, 2, 3)
    assert check_gradients(lambda: weighted_sum(ops.tile(v, 4, 5)), [v]) < TOL
    img = t64(rng, 1, 5, 6, 1)
    assert check_gradients(lambda: weighted_sum(ops.replicate_pad(img, 2)), [img]) < TOL
    kernels = t64(rng, 3, 3, 3)
    assert check_gradients(lambda: weighted_sum(ops.depthwise_correlate(img, kernels)), [img, kernels]) < TOL


def test_tile_action_gradient_is_sum_over_grid(rng):
    v = t64(rng, 1, 3)
    upstream = rng.standard_normal((1, 10, 20, 3))
    with Tape() as tape:
        loss = ops.reduce_sum(ops.multiply(ops.tile(v, 10, 20), Tensor(upstream)))
    tape.backward(loss)
    np.testing.assert_allclose(tape.gradient(v), upstream.sum(axis=(1, 2)), atol=1e-12)


def test_tiled_channels_are_spatially_constant():
    out = ops.tile(Tensor(np.array([[1.0, -1.0, 0.5]])), 10, 20).data
    assert out.shape == (1, 10, 20, 3)
    assert np.all(out.max(axis=(1, 2)) - out.min(axis=(1, 2)) == 0)
    np.testing.assert_array_equal(out[0, 3, 7], [1.0, -1.0, 0.5])


def test_mse_loss_value_and_shape_check():
    pred = Tensor(np.full((1, 2, 2, 1), 0.02))
    assert ops.mse_loss(pred, np.zeros((1, 2, 2, 1))).item() == pytest.approx(4e-4)
    with pytest.raises(ShapeError):
        ops.mse_loss(pred, np.zeros((1, 2, 3, 1)))


@settings(max_examples=25, deadline=None)
@given(
    rows=st.integers(1, 4),
    cols=st.integers(1, 4),
    channels=st.integers(1, 6),
    scale=st.floats(0.1, 50.0),
)
def test_softmax_is_a_partition_of_unity(rows, cols, channels, scale):
    data = np.random.default_rng(rows * 100 + cols * 10 + channels).standard_normal((1, rows, cols, channels))
    out = ops.softmax_channels(Tensor(scale * data, dtype=np.float64)).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(size=st.integers(8, 64), kernel=st.integers(2, 8), stride=st.integers(1, 3), padding=st.integers(0, 3))
def test_conv_deconv_size_algebra(size, kernel, stride, padding):
    out = ops.conv_output_size(size, kernel, stride, padding)
    if out >= 1:
        back = ops.deconv_output_size(out, kernel, stride, padding)
        assert size - stride < back <= size + stride


def test_backward_rejects_non_scalar_and_unrecorded_loss(rng):
    x = t64(rng, 1, 2, 2, 1)
    with Tape() as tape:
        out = ops.relu(x)
    with pytest.raises(GradientError):
        tape.backward(out)
    with pytest.raises(GradientError):
        tape.backward(Tensor(1.0))


def test_ops_outside_a_tape_record_nothing(rng):
    assert active_tape() is None
    with Tape() as tape:
        assert active_tape() is tape
        ops.relu(t64(rng, 2))
    ops.relu(t64(rng, 2))
    assert len(tape.records) == 1
    assert active_tape() is None


def test_gradient_of_unused_tensor_is_zero(rng):
    a, unused = t64(rng, 3), t64(rng, 3)
    with Tape() as tape:
        loss = ops.reduce_sum(ops.relu(a))
    tape.backward(loss)
    np.testing.assert_array_equal(tape.gradient(unused), np.zeros(3))


def test_parameter_gradients_accumulate_into_grad(rng):
    graph = ModelGraph()
    p = graph.add("w", rng.standard_normal(4))
    with Tape() as tape:
        loss = ops.reduce_sum(ops.add(p, p))
    tape.backward(loss)
    np.testing.assert_allclose(p.grad, np.full(4, 2.0))
    graph.zero_grad()
    np.testing.assert_array_equal(p.grad, np.zeros(4))


def test_model_graph_rejects_duplicate_names():
    graph = ModelGraph()
    graph.add("a", np.zeros(2))
    with pytest.raises(ConfigurationError):
        graph.add("a", np.zeros(2))
    assert graph.count() == 2
    assert isinstance(graph["a"], Parameter)


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-9]))[0] == pytest.approx(1e-2)
    assert relative_error(np.array([2.0]), np.array([1.0]))[0] == pytest.approx(0.5)
