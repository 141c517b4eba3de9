"""
Dynamic advection primitives: normalized kernels applied to the previous
frame and composited with per-pixel softmax masks.

All functions are differentiable through the active tape and accept either
unbatched ``[H,W,C]`` or batched ``[B,H,W,C]`` images.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from tiling_predictor.core import ops
from tiling_predictor.core.tensor import Tensor, as_tensor
from tiling_predictor.utils.exceptions import ConfigurationError, ShapeError

# Logit used to switch a mask channel off.
MASK_OFF = -1e9


class CdnaConfig(BaseModel):
    """
    Kernel count and size of the advection head
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_kernels: int = Field(10, ge=1, description="Number of advection kernels m")
    kernel_size: int = Field(5, ge=1, description="Odd kernel size k")

    @field_validator("kernel_size")
    @classmethod
    def check_odd(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {v}")
        return v


@dataclass
class KernelSet:
    """Raw (pre-normalization) kernel logits ``[m,k,k]``."""
    raw: Tensor

    @property
    def m(self) -> int:
        return self.raw.shape[0]

    @property
    def k(self) -> int:
        return self.raw.shape[1]

    def normalized(self) -> Tensor:
        return normalize_kernels(self.raw)

    @classmethod
    def random(cls, config: CdnaConfig, seed: int = 0, scale: float = 1.0) -> "KernelSet":
        rng = np.random.default_rng(seed)
        return cls(Tensor(scale * rng.standard_normal((config.n_kernels, config.kernel_size, config.kernel_size))))


def _batched(x: Tensor) -> Tuple[Tensor, bool]:
    if x.data.ndim == 3:
        return ops.reshape(x, (1,) + x.shape), True
    if x.data.ndim == 4:
        return x, False
    raise ShapeError(f"expected [H,W,C] or [B,H,W,C], got shape {x.shape}")


def _unbatched(x: Tensor, squeeze: bool) -> Tensor:
    return ops.reshape(x, x.shape[1:]) if squeeze else x


def normalize_kernels(raw) -> Tensor:
    """
    Spatial softmax of each kernel.

    Args:
        raw: ``[m,k,k]`` logits.

    Returns:
        ``[m,k,k]`` nonnegative kernels, each summing to 1.
    """
    raw = as_tensor(raw)
    if raw.data.ndim != 3 or raw.shape[1] != raw.shape[2]:
        raise ShapeError(f"kernels must be [m,k,k], got shape {raw.shape}")
    m, k, _ = raw.shape
    flat = ops.softmax(ops.reshape(raw, (m, k * k)), axis=-1)
    return ops.reshape(flat, (m, k, k))


def advect(prev, kernels) -> Tensor:
    """
    Apply each kernel to the previous frame.

    "Same" size output with replicated edges; correlation orientation, so a
    delta one column right of the centre gives ``out[h,w] = prev[h,w+1]``.

    Args:
        prev: ``[H,W,1]`` or ``[B,H,W,1]`` frame.
        kernels: Normalized ``[m,k,k]`` kernels, ``k`` odd.

    Returns:
        ``[H,W,m]`` (or ``[B,H,W,m]``) transformed images.
    """
    prev, squeeze = _batched(as_tensor(prev))
    kernels = as_tensor(kernels, dtype=prev.dtype)
    if kernels.data.ndim != 3 or kernels.shape[1] != kernels.shape[2]:
        raise ShapeError(f"kernels must be [m,k,k], got shape {kernels.shape}")
    k = kernels.shape[1]
    if k % 2 == 0:
        raise ConfigurationError(f"advection kernels must have odd size, got {k}")
    if prev.shape[3] != 1:
        raise ShapeError(f"previous frame must have 1 channel, got shape {prev.shape}")
    padded = ops.replicate_pad(prev, k // 2)
    return _unbatched(ops.depthwise_correlate(padded, kernels), squeeze)


def composite(transformed, current, mask_logits) -> Tensor:
    """
    Per-pixel convex combination of the sources under softmax masks.

    Sources are the ``m`` transformed images followed, when ``current`` is
    given, by the current frame.

    Args:
        transformed: ``[...,H,W,m]`` advected images.
        current: ``[...,H,W,1]`` frame or None.
        mask_logits: ``[...,H,W,m+1]`` with ``current``, else ``[...,H,W,m]``.

    Returns:
        ``[...,H,W,1]`` composited frame.
    """
    transformed, squeeze = _batched(as_tensor(transformed))
    mask_logits, _ = _batched(as_tensor(mask_logits, dtype=transformed.dtype))
    sources = transformed
    if current is not None:
        current, _ = _batched(as_tensor(current, dtype=transformed.dtype))
        sources = ops.concat_channels(transformed, current)
    if mask_logits.shape != sources.shape:
        expected = transformed.shape[-1] + (1 if current is not None else 0)
        raise ShapeError(
            f"mask logits shape {mask_logits.shape} does not match {expected} sources of shape {sources.shape}"
        )
    masks = ops.softmax_channels(mask_logits)
    return _unbatched(ops.sum_channels(ops.multiply(masks, sources)), squeeze)


def cdna_predict(prev, raw_kernels, mask_logits, use_current_image: bool = True) -> Tensor:
    """
    Normalize, advect and composite in one call.

    ``use_current_image=False`` leaves the current frame out of the sources,
    so ``mask_logits`` then has ``m`` channels.
    """
    transformed = advect(prev, normalize_kernels(raw_kernels))
    return composite(transformed, prev if use_current_image else None, mask_logits)


def disable_current_image(mask_logits: np.ndarray) -> np.ndarray:
    """Copy of ``[...,m+1]`` logits with the current-image channel switched off."""
    logits = np.array(mask_logits, copy=True)
    logits[..., -1] = MASK_OFF
    return logits


def random_masks(shape, n_channels: int, seed: int = 0, scale: float = 1.0,
                 dtype=np.float64) -> np.ndarray:
    """Seeded mask logits of shape ``shape + (n_channels,)``."""
    rng = np.random.default_rng(seed)
    return (scale * rng.standard_normal(tuple(shape) + (n_channels,))).astype(dtype)


__all__ = [
    "CdnaConfig",
    "KernelSet",
    "MASK_OFF",
    "advect",
    "cdna_predict",
    "composite",
    "disable_current_image",
    "normalize_kernels",
    "random_masks",
]
