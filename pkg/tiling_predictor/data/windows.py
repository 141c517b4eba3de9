"""
Action normalization and history-window iteration.
"""

from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from tiling_predictor.data.driving_log import ACTION_DIM, DrivingLog
from tiling_predictor.utils.exceptions import ConfigurationError, EmptyDatasetError
from tiling_predictor.utils.logger import get_logger

logger = get_logger(__name__)

STD_FLOOR = 1e-6


class NormalizationStats(BaseModel):
    """
    Per-component action mean and population standard deviation, computed
    on the training split only
    """
    model_config = ConfigDict(frozen=True)

    mean: Tuple[float, float, float] = Field(..., description="Mean of acceleration, steering, brake")
    std: Tuple[float, float, float] = Field(..., description="Standard deviation, floored at 1e-6")

    @field_validator("std")
    @classmethod
    def check_std(cls, v):
        if min(v) <= 0:
            raise ValueError("std components must be > 0")
        return v

    @classmethod
    def identity(cls) -> "NormalizationStats":
        return cls(mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0))

    def normalize(self, actions: np.ndarray) -> np.ndarray:
        actions = np.asarray(actions)
        out = (actions.astype(np.float64) - np.asarray(self.mean)) / np.asarray(self.std)
        return out.astype(actions.dtype if actions.dtype in (np.float32, np.float64) else np.float32)

    def denormalize(self, actions: np.ndarray) -> np.ndarray:
        actions = np.asarray(actions)
        out = actions.astype(np.float64) * np.asarray(self.std) + np.asarray(self.mean)
        return out.astype(actions.dtype if actions.dtype in (np.float32, np.float64) else np.float32)


def _transition_actions(log: DrivingLog) -> np.ndarray:
    return log.actions[:log.transitions]


def compute_stats(logs: Sequence[DrivingLog]) -> NormalizationStats:
    """
    Action statistics over a training split.

    Args:
        logs: Training logs; trailing actions without a successor frame are ignored.

    Returns:
        Componentwise mean and population std (floored at 1e-6).

    Raises:
        EmptyDatasetError: Fewer than two actions in total.
    """
    actions = [_transition_actions(log) for log in logs]
    stacked = np.concatenate(actions, axis=0).astype(np.float64) if actions else np.zeros((0, ACTION_DIM))
    if stacked.shape[0] < 2:
        raise EmptyDatasetError(f"need at least 2 training actions for normalization, got {stacked.shape[0]}")
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), STD_FLOOR)
    return NormalizationStats(mean=tuple(float(m) for m in mean), std=tuple(float(s) for s in std))


@dataclass(frozen=True)
class WindowedSample:
    """
    One training/evaluation example.

    Attributes:
        history: ``[H,W,window]`` frames ``t-window+1 .. t``, oldest first.
        action: Normalized action taken after frame ``t``.
        target: ``[H,W,1]`` frame ``t+1``.
        index: ``t``, the newest history frame.
        sequence: Name of the source log.
    """
    history: np.ndarray
    action: np.ndarray
    target: np.ndarray
    index: int
    sequence: str


def window_count(n_frames: int, window: int) -> int:
    """Number of windowed samples in a log of ``n_frames`` frames."""
    return max(n_frames - window, 0)


def _history(log: DrivingLog, t: int, window: int) -> np.ndarray:
    return np.ascontiguousarray(log.frames[t - window + 1:t + 1, :, :, 0].transpose(1, 2, 0))


def windows(log: DrivingLog, window: int, stats: Optional[NormalizationStats] = None) -> Iterator[WindowedSample]:
    """
    Iterate history windows of a log.

    Yields ``len(frames) - window`` samples starting at ``t = window - 1``.
    A log shorter than ``window + 1`` frames yields nothing and logs a warning.

    Args:
        log: Source log.
        window: History length W.
        stats: Action normalization; identity when omitted.

    Raises:
        ConfigurationError: ``window < 1``, raised at the call.
    """
    if window < 1:
        raise ConfigurationError(f"window must be >= 1, got {window}")
    return _iter_windows(log, window, stats or NormalizationStats.identity())


def _iter_windows(log: DrivingLog, window: int, stats: NormalizationStats) -> Iterator[WindowedSample]:
    if log.n_frames < window + 1:
        logger.warning("log too short for window", log=log.name, frames=log.n_frames, window=window)
        return
    for t in range(window - 1, log.n_frames - 1):
        yield WindowedSample(
            history=_history(log, t, window),
            action=stats.normalize(log.actions[t]),
            target=log.frames[t + 1],
            index=t,
            sequence=log.name,
        )


class WindowDataset:
    """
    Random-access view of all windows of several logs.

    Samples are addressed by a global index in log order; batches are
    materialized on demand.
    """

    def __init__(self, logs: Sequence[DrivingLog], window: int, stats: Optional[NormalizationStats] = None):
        if window < 1:
            raise ConfigurationError(f"window must be >= 1, got {window}")
        self.logs = list(logs)
        self.window = window
        self.stats = stats or NormalizationStats.identity()
        self._index: List[Tuple[int, int]] = []
        for n, log in enumerate(self.logs):
            if log.n_frames < window + 1:
                logger.warning("log too short for window", log=log.name, frames=log.n_frames, window=window)
                continue
            self._index.extend((n, t) for t in range(window - 1, log.n_frames - 1))

    def __len__(self) -> int:
        return len(self._index)

    def locate(self, i: int) -> Tuple[str, int]:
        """Log name and newest-frame index of sample ``i``."""
        n, t = self._index[i]
        return self.logs[n].name, t

    def subset(self, indices: Sequence[int]) -> "WindowDataset":
        view = WindowDataset.__new__(WindowDataset)
        view.logs, view.window, view.stats = self.logs, self.window, self.stats
        view._index = [self._index[i] for i in indices]
        return view

    def batch(self, indices: Sequence[int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Materialize samples.

        Returns:
            ``(histories [B,H,W,window], actions [B,3], targets [B,H,W,1])``.
        """
        if len(indices) == 0:
            raise EmptyDatasetError("empty batch")
        histories, actions, targets = [], [], []
        for i in indices:
            n, t = self._index[i]
            log = self.logs[n]
            histories.append(_history(log, t, self.window))
            actions.append(log.actions[t])
            targets.append(log.frames[t + 1])
        return (
            np.stack(histories),
            self.stats.normalize(np.stack(actions)),
            np.stack(targets),
        )
