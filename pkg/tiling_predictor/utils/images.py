"""
Grayscale image export (binary PGM) via Pillow
"""

import os
from typing import Tuple

import numpy as np
from PIL import Image

from tiling_predictor.utils.exceptions import ShapeError


def to_uint8(frame: np.ndarray) -> np.ndarray:
    """``round(clamp(frame, 0, 1) * 255)`` as a 2-D uint8 array."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 3 and frame.shape[2] == 1:
        frame = frame[..., 0]
    if frame.ndim != 2:
        raise ShapeError(f"expected a single-channel frame, got shape {frame.shape}")
    return np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path: str, frame: np.ndarray) -> None:
    """Write a ``[H,W]``/``[H,W,1]`` frame in [0, 1] as binary PGM (P5, maxval 255)."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    Image.fromarray(to_uint8(frame)).save(path, format="PPM")


def read_pgm(path: str) -> np.ndarray:
    """Read a PGM file back as a ``[H,W,1]`` float32 frame in [0, 1]."""
    with Image.open(path) as image:
        pixels = np.asarray(image.convert("L"), dtype=np.float32)
    return (pixels / 255.0)[..., np.newaxis]


def normalize_for_display(image: np.ndarray) -> Tuple[np.ndarray, float, float]:
    """
    Stretch an image to [0, 1] independently of other images.

    Returns:
        ``(scaled, raw_min, raw_max)``; a constant image maps to zeros.
    """
    image = np.asarray(image, dtype=np.float64)
    lo, hi = float(image.min()), float(image.max())
    if hi - lo <= 0:
        return np.zeros_like(image), lo, hi
    return (image - lo) / (hi - lo), lo, hi
