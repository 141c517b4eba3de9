"""
Finite-difference gradient verification.

Central differences in float64 are the oracle for every analytic gradient the
tape produces.
"""

from typing import Callable, Optional

import numpy as np

from tiling_predictor.core.tensor import Tape, Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def sample_coordinates(shape, count: int, rng: np.random.Generator) -> np.ndarray:
    """Pick up to ``count`` distinct flat indices into a tensor of ``shape``."""
    size = int(np.prod(shape))
    if size <= count:
        return np.arange(size)
    return np.sort(rng.choice(size, size=count, replace=False))


def numerical_gradient(loss_fn: Callable[[], Tensor], tensor: Tensor, coordinates: np.ndarray,
                       eps: float = 1e-5) -> np.ndarray:
    """
    Central-difference derivative of ``loss_fn()`` w.r.t. selected entries.

    ``tensor.data`` is perturbed in place and restored after each evaluation.

    Args:
        loss_fn: Recomputes the scalar loss from current tensor values.
        tensor: Tensor to perturb.
        coordinates: Flat indices into ``tensor``.
        eps: Step size.

    Returns:
        Array of derivatives, one per coordinate.
    """
    flat = tensor.data.reshape(-1)
    result = np.empty(len(coordinates), dtype=np.float64)
    for n, index in enumerate(coordinates):
        original = flat[index]
        flat[index] = original + eps
        plus = loss_fn().item()
        flat[index] = original - eps
        minus = loss_fn().item()
        flat[index] = original
        result[n] = (plus - minus) / (2.0 * eps)
    return result


def check_gradients(loss_fn: Callable[[], Tensor], tensors, samples: int = 50, eps: float = 1e-5,
                    seed: int = 0, rng: Optional[np.random.Generator] = None) -> float:
    """
    Compare tape gradients against central differences.

    Args:
        loss_fn: Builds the scalar loss from ``tensors``; called once under a
            tape and twice per sampled coordinate without one.
        tensors: Tensors (parameters or inputs) to verify, all float64.
        samples: Coordinates sampled per tensor.
        eps: Finite-difference step.
        seed: Seed for coordinate sampling.

    Returns:
        Maximum relative error over all sampled coordinates.
    """
    rng = rng or np.random.default_rng(seed)
    tensors = list(tensors)
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = [tape.gradient(t).reshape(-1).copy() for t in tensors]

    worst = 0.0
    for tensor, grad in zip(tensors, analytic):
        coordinates = sample_coordinates(tensor.shape, samples, rng)
        numeric = numerical_gradient(loss_fn, tensor, coordinates, eps=eps)
        error = relative_error(grad[coordinates], numeric)
        worst = max(worst, float(error.max(initial=0.0)))
    return worst
