"""
Driving log container for tiling-predictor.

A driving log is a sequence of grayscale frames in [0, 1] and the actions
(acceleration, steering angle, brake) taken between them. ``actions[i]`` is
the control applied during the interval from frame ``i`` to frame ``i + 1``.

File format (all values little-endian)::

    magic "ADVL" | version u32 | n_frames u32 | height u16 | width u16 |
    n_actions u32 | frames f32[n_frames*height*width] | actions f32[n_actions*3]
"""

import os
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from tiling_predictor.utils.exceptions import EmptyDatasetError, LogFormatError
from tiling_predictor.utils.logger import get_logger

logger = get_logger(__name__)

LOG_MAGIC = b"ADVL"
LOG_VERSION = 1
ACTION_DIM = 3
FRAME_HEIGHT = 80
FRAME_WIDTH = 160
_HEADER = struct.Struct("<4sIIHHI")


@dataclass(frozen=True)
class DrivingLog:
    """
    Aligned frames and actions of one recording.

    Attributes:
        frames: ``[N,H,W,1]`` float32 pixels in [0, 1].
        actions: ``[N-1,3]`` or ``[N,3]`` float32 raw actions
            (m/s^2, degrees, brake in [0, 1]); a trailing action is ignored.
        name: Label used in reports.
    """
    frames: np.ndarray
    actions: np.ndarray
    name: str = field(default="log")

    def __post_init__(self):
        validate_log(self.frames, self.actions)

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def frame_shape(self) -> Tuple[int, int]:
        return int(self.frames.shape[1]), int(self.frames.shape[2])

    @property
    def transitions(self) -> int:
        """Number of (frame, action, next frame) transitions."""
        return max(self.n_frames - 1, 0)


def validate_log(frames: np.ndarray, actions: np.ndarray) -> None:
    """
    Enforce shape, alignment and pixel-range rules.

    Raises:
        LogFormatError: Any rule is violated.
    """
    if frames.ndim != 4 or frames.shape[3] != 1:
        raise LogFormatError(f"frames must be [N,H,W,1], got shape {frames.shape}")
    if actions.ndim != 2 or actions.shape[1] != ACTION_DIM:
        raise LogFormatError(f"actions must be [M,{ACTION_DIM}], got shape {actions.shape}")
    n_frames, n_actions = frames.shape[0], actions.shape[0]
    if n_actions not in (n_frames - 1, n_frames) and not (n_frames == 0 and n_actions == 0):
        raise LogFormatError(
            f"{n_actions} actions for {n_frames} frames; expected {max(n_frames - 1, 0)} or {n_frames}"
        )
    if frames.size and (not np.all(np.isfinite(frames)) or frames.min() < 0.0 or frames.max() > 1.0):
        raise LogFormatError(
            f"pixel values must lie in [0, 1], got range [{float(np.nanmin(frames))}, {float(np.nanmax(frames))}]"
        )
    if actions.size and not np.all(np.isfinite(actions)):
        raise LogFormatError("actions contain non-finite values")


def make_log(frames, actions, name: str = "log") -> DrivingLog:
    """Build a validated log from array-likes, normalizing dtypes and the channel axis."""
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim == 3:
        frames = frames[..., np.newaxis]
    actions = np.asarray(actions, dtype=np.float32).reshape(-1, ACTION_DIM)
    return DrivingLog(np.ascontiguousarray(frames), np.ascontiguousarray(actions), name=name)


def save_log(log: DrivingLog, path: str) -> None:
    """
    Write a log in the ADVL container format.

    Args:
        log: Log to write.
        path: Destination file.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    height, width = log.frame_shape if log.n_frames else (0, 0)
    header = _HEADER.pack(LOG_MAGIC, LOG_VERSION, log.n_frames, height, width, log.actions.shape[0])
    with open(path, "wb") as f:
        f.write(header)
        f.write(log.frames.astype("<f4", copy=False).tobytes())
        f.write(log.actions.astype("<f4", copy=False).tobytes())
    logger.info("wrote driving log", path=path, frames=log.n_frames, actions=int(log.actions.shape[0]))


def load_log(path: str, name: Optional[str] = None) -> DrivingLog:
    """
    Read and validate an ADVL log.

    Args:
        path: Source file.
        name: Report label; defaults to the file's base name.

    Returns:
        Validated log.

    Raises:
        LogFormatError: Bad magic/version, truncated data or out-of-range pixels.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEADER.size:
        raise LogFormatError(f"{path}: truncated header; expected {_HEADER.size} bytes, got {len(blob)}")
    magic, version, n_frames, height, width, n_actions = _HEADER.unpack_from(blob)
    if magic != LOG_MAGIC:
        raise LogFormatError(f"{path}: bad magic {magic!r}, expected {LOG_MAGIC!r}")
    if version != LOG_VERSION:
        raise LogFormatError(f"{path}: unsupported version {version}, expected {LOG_VERSION}")
    frame_values = n_frames * height * width
    expected = _HEADER.size + 4 * (frame_values + n_actions * ACTION_DIM)
    if len(blob) != expected:
        kind = "truncated" if len(blob) < expected else "oversized"
        raise LogFormatError(f"{path}: {kind} file; expected {expected} bytes, got {len(blob)}")
    offset = _HEADER.size
    frames = np.frombuffer(blob, dtype="<f4", count=frame_values, offset=offset)
    offset += 4 * frame_values
    actions = np.frombuffer(blob, dtype="<f4", count=n_actions * ACTION_DIM, offset=offset)
    log = DrivingLog(
        frames=frames.astype(np.float32).reshape(n_frames, height, width, 1),
        actions=actions.astype(np.float32).reshape(n_actions, ACTION_DIM),
        name=name or os.path.splitext(os.path.basename(path))[0],
    )
    logger.debug("loaded driving log", path=path, frames=n_frames, actions=n_actions)
    return log


def split_logs(logs: Sequence[DrivingLog], test_fraction: float = 0.2) -> Tuple[List[DrivingLog], List[DrivingLog]]:
    """
    Split by log file, keeping order (earlier logs train, later logs test).

    Args:
        logs: Logs in temporal order.
        test_fraction: Share of logs held out, at least one log when
            there are two or more.

    Returns:
        ``(train_logs, test_logs)``.
    """
    logs = list(logs)
    if not logs:
        raise EmptyDatasetError("no logs to split")
    n_test = int(round(len(logs) * test_fraction))
    if len(logs) > 1:
        n_test = min(max(n_test, 1), len(logs) - 1)
    else:
        n_test = 0
    return logs[:len(logs) - n_test], logs[len(logs) - n_test:]


def convert_rgb_frames(frames_rgb: np.ndarray, height: int = FRAME_HEIGHT, width: int = FRAME_WIDTH) -> np.ndarray:
    """
    Convert external RGB frames to the model's grayscale format.

    Luminance is ``0.299 R + 0.587 G + 0.114 B``; frames are then shrunk to
    ``height x width`` by area averaging (source size must be an integer
    multiple of the target size).

    Args:
        frames_rgb: ``[N,H,W,3]`` uint8 or float in [0, 1].
        height: Target height.
        width: Target width.

    Returns:
        ``[N,height,width,1]`` float32 in [0, 1].
    """
    frames = np.asarray(frames_rgb)
    if frames.ndim != 4 or frames.shape[3] != 3:
        raise LogFormatError(f"expected [N,H,W,3] RGB frames, got shape {frames.shape}")
    scale = 255.0 if np.issubdtype(frames.dtype, np.integer) else 1.0
    gray = (frames[..., 0] * 0.299 + frames[..., 1] * 0.587 + frames[..., 2] * 0.114) / scale
    n, src_h, src_w = gray.shape
    if src_h % height or src_w % width:
        raise LogFormatError(f"source size {src_h}x{src_w} is not a multiple of {height}x{width}")
    fy, fx = src_h // height, src_w // width
    pooled = gray.reshape(n, height, fy, width, fx).mean(axis=(2, 4))
    return np.clip(pooled, 0.0, 1.0).astype(np.float32)[..., np.newaxis]
