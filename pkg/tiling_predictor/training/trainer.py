"""
Epoch loop minimizing the mean squared next-frame error with Adam.
"""

import csv
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from tiling_predictor.core import ops
from tiling_predictor.core.tensor import Tape
from tiling_predictor.data.windows import WindowDataset
from tiling_predictor.models.zoo import PredictiveModel, clamp_frame
from tiling_predictor.training.adam import AdamState, TrainConfig, adam_step
from tiling_predictor.training.checkpoint import save_checkpoint
from tiling_predictor.utils.config import settings
from tiling_predictor.utils.exceptions import DivergenceError, EmptyDatasetError
from tiling_predictor.utils.logger import get_logger

logger = get_logger(__name__)

FINAL_CHECKPOINT = "final.advt"
BEST_CHECKPOINT = "best.advt"
LOSS_CURVE = "loss.csv"


@dataclass
class TrainResult:
    """
    Outcome of a training run.

    Attributes:
        loss_curve: Mean training MSE per epoch.
        validation_curve: Held-out MSE (clamped predictions) per epoch; empty
            without a validation slice.
        best_epoch: 1-based epoch of the best checkpoint.
        optimizer: Final Adam state.
    """
    loss_curve: List[float] = field(default_factory=list)
    validation_curve: List[float] = field(default_factory=list)
    best_epoch: int = 0
    optimizer: Optional[AdamState] = None
    final_checkpoint: Optional[str] = None
    best_checkpoint: Optional[str] = None
    loss_csv: Optional[str] = None


def write_loss_curve(curve: Sequence[float], path: str) -> None:
    """Write ``epoch,mean_mse`` rows (1-based epochs)."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "mean_mse"])
        for epoch, value in enumerate(curve, start=1):
            writer.writerow([epoch, repr(float(value))])


def split_validation(dataset: WindowDataset, fraction: float):
    """
    Hold out the last ``fraction`` of the windows.

    Returns:
        ``(train, validation)``; validation is ``None`` when nothing is held out.
    """
    n = len(dataset)
    n_val = int(n * fraction)
    if fraction > 0 and n >= 2:
        n_val = max(n_val, 1)
    if n_val == 0:
        return dataset, None
    return dataset.subset(range(n - n_val)), dataset.subset(range(n - n_val, n))


def validation_mse(model: PredictiveModel, dataset: WindowDataset, batch_size: int = 16) -> float:
    """Mean per-pixel MSE of clamped predictions over ``dataset``."""
    total, count = 0.0, 0
    for start in range(0, len(dataset), batch_size):
        indices = list(range(start, min(start + batch_size, len(dataset))))
        histories, actions, targets = dataset.batch(indices)
        frames = clamp_frame(model.forward(histories, actions).frame.data).astype(np.float64)
        total += float(np.sum((frames - targets.astype(np.float64)) ** 2))
        count += frames.size
    return total / count


def train(model: PredictiveModel, dataset: WindowDataset, config: TrainConfig,
          out_dir: Optional[str] = None, validation: Optional[WindowDataset] = None) -> TrainResult:
    """
    Train ``model`` in place.

    Each epoch visits every training window once in a seeded random order
    (or in order when ``config.shuffle`` is off). When ``out_dir`` is given,
    ``best.advt`` is rewritten whenever the validation MSE (or, without a
    validation slice, the training loss) improves, and ``final.advt`` plus
    ``loss.csv`` are written at the end.

    Args:
        model: Model to train; a parameter-free model only has its loss tracked.
        dataset: Training windows with action normalization.
        config: Optimizer settings.
        out_dir: Directory for checkpoints and the loss curve.
        validation: Held-out windows; by default the last
            ``config.validation_fraction`` of ``dataset``.

    Returns:
        Loss curves, best epoch and the final optimizer state.

    Raises:
        EmptyDatasetError: No training windows.
        DivergenceError: Non-finite loss or gradient; no checkpoint is written
            for the diverged step.
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("no training windows")
    if validation is None:
        dataset, validation = split_validation(dataset, config.validation_fraction)

    params = model.parameters()
    state = AdamState.zeros(params)
    rng = np.random.default_rng(config.seed)
    result = TrainResult(optimizer=state)
    best = np.inf
    n = len(dataset)
    n_batches = (n + config.batch_size - 1) // config.batch_size
    logger.info("training", kind=model.kind.value, params=model.count_params(), windows=n,
                validation=len(validation) if validation is not None else 0, epochs=config.epochs)

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        total, count = 0.0, 0
        batches = tqdm(range(n_batches), desc=f"epoch {epoch}", leave=False,
                       disable=not settings.PROGRESS_BARS)
        for batch in batches:
            indices = order[batch * config.batch_size:(batch + 1) * config.batch_size]
            histories, actions, targets = dataset.batch(indices)
            model.graph.zero_grad()
            with Tape() as tape:
                frame = model.forward(histories, actions).frame
                loss = ops.mse_loss(frame, targets)
            value = loss.item()
            if not np.isfinite(value):
                logger.error("training diverged", epoch=epoch, batch=batch + 1, loss=value)
                raise DivergenceError("non-finite training loss", epoch=epoch, batch=batch + 1)
            if params:
                tape.backward(loss)
                try:
                    adam_step(params, [p.grad for p in params], state, config)
                except DivergenceError as e:
                    logger.error("training diverged", epoch=epoch, batch=batch + 1, detail=e.detail)
                    raise DivergenceError(e.detail, epoch=epoch, batch=batch + 1) from e
            # float64 sum of squares, independent of how windows are batched
            total += float(np.sum((frame.data.astype(np.float64) - targets.astype(np.float64)) ** 2))
            count += frame.data.size
            batches.set_postfix(mse=f"{value:.3e}")

        mean = total / count
        result.loss_curve.append(mean)
        score = mean
        if validation is not None:
            score = validation_mse(model, validation, config.batch_size)
            result.validation_curve.append(score)
        logger.info("epoch complete", epoch=epoch, mean_mse=mean,
                    val_mse=score if validation is not None else None)

        if score < best:
            best = score
            result.best_epoch = epoch
            if out_dir is not None:
                result.best_checkpoint = os.path.join(out_dir, BEST_CHECKPOINT)
                save_checkpoint(model, result.best_checkpoint, stats=dataset.stats, optimizer=state)

    if out_dir is not None:
        result.final_checkpoint = os.path.join(out_dir, FINAL_CHECKPOINT)
        save_checkpoint(model, result.final_checkpoint, stats=dataset.stats, optimizer=state)
        result.loss_csv = os.path.join(out_dir, LOSS_CURVE)
        write_loss_curve(result.loss_curve, result.loss_csv)
    return result
