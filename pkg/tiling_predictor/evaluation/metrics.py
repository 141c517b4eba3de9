"""
Image-quality metrics and test-set evaluation.

MSE is the per-pixel mean squared difference. SSIM uses Gaussian-weighted
local statistics over the valid region (no padding) and is averaged per
image, then over the set.
"""

import csv
import os
import re
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import signal

from tiling_predictor.data.windows import WindowDataset
from tiling_predictor.models.zoo import PredictiveModel, clamp_frame
from tiling_predictor.utils.config import settings
from tiling_predictor.utils.exceptions import ConfigurationError, EmptyDatasetError, ShapeError
from tiling_predictor.utils.logger import get_logger

logger = get_logger(__name__)

MSE_SCALE = 1e4
REPORT_LINE = re.compile(
    r"^model=(?P<model>\S+) n=(?P<n>\d+) mse_e4=(?P<mse_e4>-?\d+\.\d{4}) ssim=(?P<ssim>-?\d+\.\d{4})$"
)


class SsimParams(BaseModel):
    """
    SSIM window and stability constants
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    window_size: int = Field(11, ge=1)
    sigma: float = Field(1.5, gt=0)
    k1: float = Field(0.01, gt=0)
    k2: float = Field(0.03, gt=0)
    data_range: float = Field(1.0, gt=0, description="Dynamic range L of the pixel values")

    @property
    def c1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.data_range) ** 2


DEFAULT_SSIM = SsimParams()


def gaussian_window(params: SsimParams = DEFAULT_SSIM) -> np.ndarray:
    """Normalized 2-D Gaussian window (float64, sums to 1)."""
    half = (params.window_size - 1) / 2.0
    x = np.arange(params.window_size, dtype=np.float64) - half
    g = np.exp(-(x ** 2) / (2.0 * params.sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def _as_image(x, label: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3 and x.shape[2] == 1:
        x = x[..., 0]
    if x.ndim != 2:
        raise ShapeError(f"{label} must be a single-channel image, got shape {x.shape}")
    return x


def mse_image(pred, gt) -> float:
    """Mean squared pixel difference."""
    pred, gt = _as_image(pred, "prediction"), _as_image(gt, "ground truth")
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction shape {pred.shape} does not match ground truth shape {gt.shape}")
    return float(np.mean((pred - gt) ** 2))


def ssim(pred, gt, params: SsimParams = DEFAULT_SSIM) -> float:
    """
    Mean structural similarity of two single-channel images.

    Args:
        pred: ``[H,W]`` or ``[H,W,1]`` image.
        gt: Image of the same shape.
        params: Window and constants.

    Returns:
        Mean of the local SSIM map, in [-1, 1]; symmetric in its arguments.

    Raises:
        ShapeError: Shapes differ or the image is smaller than the window.
    """
    x, y = _as_image(pred, "prediction"), _as_image(gt, "ground truth")
    if x.shape != y.shape:
        raise ShapeError(f"prediction shape {x.shape} does not match ground truth shape {y.shape}")
    if min(x.shape) < params.window_size:
        raise ShapeError(f"image of shape {x.shape} is smaller than the {params.window_size}x{params.window_size} window")
    window = gaussian_window(params)

    def local(a: np.ndarray) -> np.ndarray:
        return signal.correlate2d(a, window, mode="valid")

    mu_x, mu_y = local(x), local(y)
    sigma_xx = local(x * x) - mu_x * mu_x
    sigma_yy = local(y * y) - mu_y * mu_y
    sigma_xy = local(x * y) - mu_x * mu_y
    c1, c2 = params.c1, params.c2
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * sigma_xy + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (sigma_xx + sigma_yy + c2)
    )
    return float(np.clip(ssim_map.mean(), -1.0, 1.0))


@dataclass(frozen=True)
class SampleScore:
    sequence: str
    index: int
    mse: float
    ssim: float


@dataclass
class EvalReport:
    """
    Aggregate scores over a test set.

    ``mean_mse`` is per-pixel; ``mse_e4`` is the same value in units of 1e-4.
    """
    model: str
    n_samples: int
    mean_mse: float
    mean_ssim: float
    per_sequence: Dict[str, Tuple[int, float, float]] = field(default_factory=dict)
    per_sample: List[SampleScore] = field(default_factory=list)

    @property
    def mse_e4(self) -> float:
        return self.mean_mse * MSE_SCALE

    def to_line(self) -> str:
        return f"model={self.model} n={self.n_samples} mse_e4={self.mse_e4:.4f} ssim={self.mean_ssim:.4f}"

    def write_csv(self, path: str) -> None:
        """Per-sample rows ``sequence,index,mse,ssim``."""
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["sequence", "index", "mse", "ssim"])
            for row in self.per_sample:
                writer.writerow([row.sequence, row.index, repr(row.mse), repr(row.ssim)])


def parse_report_line(line: str) -> EvalReport:
    """
    Parse a ``model=<name> n=<int> mse_e4=<x.xxxx> ssim=<x.xxxx>`` line.

    Raises:
        ConfigurationError: The line does not follow the grammar.
    """
    match = REPORT_LINE.match(line.strip())
    if match is None:
        raise ConfigurationError(f"not a report line: {line!r}")
    return EvalReport(
        model=match["model"],
        n_samples=int(match["n"]),
        mean_mse=float(match["mse_e4"]) / MSE_SCALE,
        mean_ssim=float(match["ssim"]),
    )


def _score_batch(model: PredictiveModel, dataset: WindowDataset, indices: Sequence[int],
                 params: SsimParams) -> List[SampleScore]:
    histories, actions, targets = dataset.batch(indices)
    frames = clamp_frame(model.forward(histories, actions).frame.data)
    scores = []
    for i, frame, target in zip(indices, frames, targets):
        sequence, t = dataset.locate(i)
        scores.append(SampleScore(sequence, t, mse_image(frame, target), ssim(frame, target, params)))
    return scores


def evaluate(model: PredictiveModel, dataset: WindowDataset, window: Optional[int] = None,
             name: Optional[str] = None, params: SsimParams = DEFAULT_SSIM, batch_size: int = 16,
             workers: Optional[int] = None) -> EvalReport:
    """
    Predict every windowed sample, clamp, and average MSE and SSIM.

    Args:
        model: Predictor.
        dataset: Test windows (normalized with the training statistics).
        window: Expected history length; must match the model and dataset.
        name: Report label; defaults to the model kind.
        params: SSIM settings.
        batch_size: Samples per forward pass.
        workers: Thread count; ``settings.EVAL_WORKERS`` by default.

    Returns:
        Report with per-sequence and per-sample breakdowns, in sample order.

    Raises:
        ConfigurationError: Window mismatch.
        EmptyDatasetError: No samples.
    """
    window = model.window if window is None else window
    if window != model.window or dataset.window != model.window:
        raise ConfigurationError(
            f"window mismatch: requested {window}, model {model.window}, dataset {dataset.window}"
        )
    if len(dataset) == 0:
        raise EmptyDatasetError("no evaluation windows")
    workers = workers or settings.EVAL_WORKERS
    chunks = [list(range(s, min(s + batch_size, len(dataset)))) for s in range(0, len(dataset), batch_size)]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: _score_batch(model, dataset, c, params), chunks))
    else:
        results = [_score_batch(model, dataset, c, params) for c in chunks]
    samples = [s for chunk in results for s in chunk]

    per_sequence: "OrderedDict[str, List[float]]" = OrderedDict()
    total_mse, total_ssim = 0.0, 0.0
    for s in samples:
        total_mse += s.mse
        total_ssim += s.ssim
        entry = per_sequence.setdefault(s.sequence, [0, 0.0, 0.0])
        entry[0] += 1
        entry[1] += s.mse
        entry[2] += s.ssim
    n = len(samples)
    report = EvalReport(
        model=name or model.kind.value,
        n_samples=n,
        mean_mse=total_mse / n,
        mean_ssim=total_ssim / n,
        per_sequence={k: (c, m / c, q / c) for k, (c, m, q) in per_sequence.items()},
        per_sample=samples,
    )
    logger.info("evaluated", model=report.model, n=n, mse_e4=round(report.mse_e4, 4), ssim=round(report.mean_ssim, 4))
    return report
