import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError

from tiling_predictor.cdna import primitives as cdna
from tiling_predictor.core import ops
from tiling_predictor.core.gradcheck import check_gradients
from tiling_predictor.core.tensor import Tensor
from tiling_predictor.utils.exceptions import ConfigurationError, ShapeError

TOL = 1e-3


def delta(k: int, row: int, col: int) -> np.ndarray:
    kernel = np.zeros((1, k, k))
    kernel[0, row, col] = 1.0
    return kernel


def projected_sum(out: Tensor, seed: int = 3) -> Tensor:
    projection = Tensor(np.random.default_rng(seed).standard_normal(out.shape), dtype=out.dtype)
    return ops.reduce_sum(ops.multiply(out, projection))


def test_normalized_kernels_sum_to_one(rng):
    kernels = cdna.normalize_kernels(Tensor(5.0 * rng.standard_normal((10, 5, 5)), dtype=np.float64)).data
    assert kernels.shape == (10, 5, 5)
    assert np.all(kernels >= 0)
    np.testing.assert_allclose(kernels.sum(axis=(1, 2)), 1.0, atol=1e-12)


def test_uniform_logits_give_uniform_kernels():
    kernels = cdna.normalize_kernels(Tensor(np.full((3, 5, 5), 0.7), dtype=np.float64)).data
    np.testing.assert_allclose(kernels, 1.0 / 25.0, atol=1e-15)


def test_centred_delta_is_identity(rng):
    prev = rng.uniform(size=(12, 20, 1))
    out = cdna.advect(Tensor(prev, dtype=np.float64), delta(5, 2, 2)).data
    np.testing.assert_array_equal(out, prev)


def test_off_centre_delta_shifts_with_replicated_edge(rng):
    prev = rng.uniform(size=(6, 9, 1))
    out = cdna.advect(Tensor(prev, dtype=np.float64), delta(3, 1, 2)).data[..., 0]
    np.testing.assert_array_equal(out[:, :-1], prev[:, 1:, 0])
    np.testing.assert_array_equal(out[:, -1], prev[:, -1, 0])


def test_constant_image_is_preserved(rng):
    prev = Tensor(np.full((2, 7, 11, 1), 0.42), dtype=np.float64)
    kernels = cdna.KernelSet.random(cdna.CdnaConfig(n_kernels=4, kernel_size=5), seed=2).normalized()
    out = cdna.advect(prev, kernels).data
    assert out.shape == (2, 7, 11, 4)
    np.testing.assert_allclose(out, 0.42, atol=1e-12)


def test_even_kernels_are_rejected():
    with pytest.raises(ConfigurationError):
        cdna.advect(np.zeros((4, 4, 1)), np.full((1, 4, 4), 1.0 / 16))
    with pytest.raises(ValidationError):
        cdna.CdnaConfig(kernel_size=4)


def test_composite_checks_channel_counts(rng):
    transformed = rng.uniform(size=(4, 5, 3))
    current = rng.uniform(size=(4, 5, 1))
    with pytest.raises(ShapeError):
        cdna.composite(transformed, current, np.zeros((4, 5, 3)))
    assert cdna.composite(transformed, None, np.zeros((4, 5, 3))).shape == (4, 5, 1)


@settings(max_examples=30, deadline=None)
@given(m=st.integers(1, 6), scale=st.floats(0.0, 30.0), seed=st.integers(0, 2 ** 16))
def test_composite_is_a_convex_combination(m, scale, seed):
    rng = np.random.default_rng(seed)
    transformed = rng.uniform(size=(5, 6, m))
    current = rng.uniform(size=(5, 6, 1))
    logits = cdna.random_masks((5, 6), m + 1, seed=seed, scale=scale)
    out = cdna.composite(transformed, current, logits).data[..., 0]
    sources = np.concatenate([transformed, current], axis=-1)
    assert np.all(out >= sources.min(axis=-1) - 1e-12)
    assert np.all(out <= sources.max(axis=-1) + 1e-12)


def test_one_hot_masks_select_a_source(rng):
    transformed = rng.uniform(size=(4, 5, 3))
    current = rng.uniform(size=(4, 5, 1))
    for j in range(4):
        logits = np.zeros((4, 5, 4))
        logits[..., j] = 1e3
        out = cdna.composite(transformed, current, logits).data
        sources = np.concatenate([transformed, current], axis=-1)
        np.testing.assert_allclose(out[..., 0], sources[..., j], atol=1e-12)


def test_disabling_the_current_image_matches_leaving_it_out(rng):
    prev = rng.uniform(size=(2, 10, 12, 1))
    raw = cdna.KernelSet.random(cdna.CdnaConfig(), seed=5).raw
    logits = cdna.random_masks((2, 10, 12), 11, seed=6, scale=3.0)
    switched_off = cdna.cdna_predict(prev, raw, cdna.disable_current_image(logits)).data
    left_out = cdna.cdna_predict(prev, raw, logits[..., :10], use_current_image=False).data
    np.testing.assert_allclose(switched_off, left_out, atol=1e-5)
    assert logits[..., -1].max() > cdna.MASK_OFF


def test_primitive_gradients(rng):
    raw = Tensor(rng.standard_normal((3, 3, 3)), dtype=np.float64)
    prev = Tensor(rng.uniform(size=(2, 5, 6, 1)), dtype=np.float64)
    logits = Tensor(rng.standard_normal((2, 5, 6, 4)), dtype=np.float64)
    assert check_gradients(lambda: projected_sum(cdna.normalize_kernels(raw)), [raw]) < TOL
    assert check_gradients(lambda: projected_sum(cdna.advect(prev, cdna.normalize_kernels(raw))), [prev, raw]) < TOL
    assert check_gradients(lambda: projected_sum(cdna.cdna_predict(prev, raw, logits)), [prev, raw, logits]) < TOL
