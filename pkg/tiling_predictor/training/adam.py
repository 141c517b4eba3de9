"""
Adam optimizer and training configuration
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from tiling_predictor.core.tensor import Parameter
from tiling_predictor.utils.exceptions import DivergenceError, ShapeError


class TrainConfig(BaseModel):
    """
    Optimizer and epoch-loop settings
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    learning_rate: float = Field(1e-4, gt=0, description="Adam step size")
    epochs: int = Field(50, ge=1)
    batch_size: int = Field(16, ge=1)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    epsilon: float = Field(1e-8, gt=0)
    seed: int = Field(0, description="Shuffling seed")
    shuffle: bool = True
    validation_fraction: float = Field(
        0.1, ge=0, lt=1, description="Share of training windows (taken from the end) held out for best-checkpoint selection"
    )


@dataclass
class AdamState:
    """
    First/second moment estimates keyed by parameter name, and the step counter.
    """
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros(cls, params: Sequence[Parameter]) -> "AdamState":
        return cls(
            step=0,
            m={p.name: np.zeros_like(p.data) for p in params},
            v={p.name: np.zeros_like(p.data) for p in params},
        )


def adam_step(params: Sequence[Parameter], grads: Sequence[Optional[np.ndarray]], state: AdamState,
              config: TrainConfig) -> AdamState:
    """
    One bias-corrected Adam update, applied to ``params`` in place.

    ``theta -= lr * m_hat / (sqrt(v_hat) + eps)`` with
    ``m_hat = m / (1 - beta1^t)`` and ``v_hat = v / (1 - beta2^t)``.
    A missing gradient counts as zero.

    Args:
        params: Parameters to update.
        grads: Gradients aligned with ``params``.
        state: Moment estimates; updated in place and returned.
        config: Learning rate and Adam constants.

    Returns:
        ``state`` after the step.

    Raises:
        DivergenceError: A gradient contains NaN or infinity; nothing is updated.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    resolved = []
    for p, g in zip(params, grads):
        g = np.zeros_like(p.data) if g is None else np.asarray(g)
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {p.name} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {p.name}")
        resolved.append(g)

    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t
    for p, g in zip(params, resolved):
        m = state.m.get(p.name)
        v = state.v.get(p.name)
        if m is None or m.shape != p.shape:
            m, v = np.zeros_like(p.data), np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        update = config.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + config.epsilon)
        p.data = (p.data - update).astype(p.dtype, copy=False)
        state.m[p.name] = m.astype(p.dtype, copy=False)
        state.v[p.name] = v.astype(p.dtype, copy=False)
    return state
