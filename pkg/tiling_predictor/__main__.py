"""
Main entry point for tiling-predictor.

This module provides the command-line interface: synthetic data generation,
training, evaluation, single-step prediction, rollout and basis inspection.
Results go to stdout, logs to stderr.
"""

import csv
import functools
import os
from typing import Dict, List, Optional, Sequence, Tuple

import click
import numpy as np

from tiling_predictor import __version__
from tiling_predictor.data.driving_log import DrivingLog, load_log, save_log
from tiling_predictor.data.roadworld import RoadworldConfig, simulate_roadworld
from tiling_predictor.data.windows import NormalizationStats, WindowDataset, compute_stats
from tiling_predictor.evaluation.metrics import evaluate, mse_image, ssim
from tiling_predictor.evaluation.reference import REFERENCE_RESULTS, reference_lines
from tiling_predictor.models.configs import ModelKind
from tiling_predictor.models.zoo import PredictiveModel, build_model, clamp_frame, predict, rollout
from tiling_predictor.training.adam import TrainConfig
from tiling_predictor.training.checkpoint import load_checkpoint
from tiling_predictor.training.trainer import train as run_training
from tiling_predictor.utils.exceptions import ConfigurationError, PredictorError
from tiling_predictor.utils.images import normalize_for_display, write_pgm
from tiling_predictor.utils.logger import configure_logging, log_context

MODEL_CHOICES = [kind.value for kind in ModelKind]


def load_config_file(path: str, command: click.Command) -> Dict[str, object]:
    """
    Parse a ``key = value`` file into defaults for ``command``.

    ``#`` starts a comment; dashes in keys are read as underscores. Options
    that take several values accept a comma-separated list.

    Raises:
        click.UsageError: A line has no ``=`` or a key is not an option of the command.
    """
    known = {p.name: p for p in command.params}
    values: Dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as f:
        for number, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise click.UsageError(f"{path}:{number}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            name = key.replace("-", "_")
            if name not in known:
                raise click.UsageError(
                    f"{path}:{number}: unknown config key {key!r} for '{command.name}'"
                )
            values[name] = [v.strip() for v in value.split(",")] if getattr(known[name], "multiple", False) else value
    return values


def handle_errors(func):
    """Map domain errors to exit codes (2 usage/validation, 3 divergence)."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            with log_context(command=ctx.info_name):
                return func(*args, **kwargs)
        except PredictorError as e:
            click.echo(f"error: {e.detail}", err=True)
            ctx.exit(e.exit_code)
        except OSError as e:
            click.echo(f"error: {e}", err=True)
            ctx.exit(2)
    return wrapper


@click.group()
@click.version_option(__version__, prog_name="tiling-predictor")
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False),
              help="key = value file with defaults for the subcommand's options")
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
                                               case_sensitive=False),
              help="Logging level (default from TILING_PREDICTOR_LOG_LEVEL)")
@click.pass_context
def cli(ctx: click.Context, config_file: Optional[str], log_level: Optional[str]) -> None:
    """Action-conditioned next-frame prediction for driving video."""
    if log_level:
        configure_logging(log_level)
    if config_file and ctx.invoked_subcommand:
        command = cli.get_command(ctx, ctx.invoked_subcommand)
        ctx.default_map = {ctx.invoked_subcommand: load_config_file(config_file, command)}


def _load_logs(paths: Sequence[str]) -> List[DrivingLog]:
    return [load_log(p) for p in paths]


def _model_overrides(kind: ModelKind, window: int, basis: Optional[int],
                     frame_shape: Optional[Tuple[int, int]] = None) -> dict:
    overrides = {"window": window}
    if basis is not None:
        if kind is not ModelKind.SDF_TILING:
            raise ConfigurationError(f"--basis applies to sdf-tiling only, not {kind.value}")
        overrides["decoder_channels"] = (basis, basis, basis)
    if frame_shape is not None:
        overrides["input_height"], overrides["input_width"] = frame_shape
    return overrides


def _resolve_model(checkpoint: Optional[str], baseline: Optional[str], window: Optional[int],
                   frame_shape: Tuple[int, int]) -> Tuple[PredictiveModel, NormalizationStats]:
    if bool(checkpoint) == bool(baseline):
        raise click.UsageError("give exactly one of --checkpoint or --baseline")
    if baseline:
        model = build_model(ModelKind.COPY_LAST_FRAME, **_model_overrides(
            ModelKind.COPY_LAST_FRAME, window or 4, None, frame_shape))
        return model, NormalizationStats.identity()
    loaded = load_checkpoint(checkpoint)
    model = loaded.model
    if window is not None and window != model.window:
        raise ConfigurationError(f"--window {window} does not match the checkpoint's window {model.window}")
    return model, loaded.stats or NormalizationStats.identity()


def _history_at(log: DrivingLog, start: int, window: int, steps: int) -> np.ndarray:
    if start < 0 or start + window + steps > log.n_frames:
        raise ConfigurationError(
            f"--start {start} with window {window} and {steps} step(s) needs {start + window + steps} frames; "
            f"log has {log.n_frames}"
        )
    return np.ascontiguousarray(log.frames[start:start + window, :, :, 0].transpose(1, 2, 0))


checkpoint_option = click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False),
                                 help="Trained model (.advt)")
baseline_option = click.option("--baseline", type=click.Choice(["copy"]),
                               help="Use the copy-last-frame baseline instead of a checkpoint")
window_option = click.option("--window", type=click.IntRange(min=1), default=None,
                             help="History window; must match the checkpoint")


@cli.command("gen-data")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Destination .advl file")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--frames", type=click.IntRange(min=1), default=500, show_default=True)
@click.option("--noise", type=click.FloatRange(min=0), default=0.01, show_default=True,
              help="Std of Gaussian pixel noise")
@click.option("--steer-gain", type=float, default=2.0, show_default=True, help="Pixels per unit steering")
@click.option("--accel-gain", type=float, default=0.05, show_default=True,
              help="Relative lead-vehicle scale change per unit acceleration")
@click.option("--brake-gain", type=click.FloatRange(0, 1), default=0.3, show_default=True,
              help="Darkening per unit brake")
@click.option("--static", is_flag=True, help="All-zero actions")
@handle_errors
def gen_data(out: str, seed: int, frames: int, noise: float, steer_gain: float, accel_gain: float,
             brake_gain: float, static: bool) -> None:
    """Generate a synthetic roadworld driving log."""
    config = RoadworldConfig(seed=seed, n_frames=frames, noise=noise, steer_gain=steer_gain,
                             accel_gain=accel_gain, brake_gain=brake_gain)
    actions = np.zeros((frames - 1, 3)) if static else None
    log = simulate_roadworld(config, actions=actions, name=os.path.splitext(os.path.basename(out))[0]).log
    save_log(log, out)
    click.echo(f"frames={log.n_frames} actions={log.actions.shape[0]}")


@cli.command("count-params")
@click.option("--model", "kind", type=click.Choice(MODEL_CHOICES), default="sdf-tiling", show_default=True)
@click.option("--window", type=click.IntRange(min=1), default=4, show_default=True)
@click.option("--basis", type=click.IntRange(min=1), default=None, help="Basis images n_b (sdf-tiling)")
@handle_errors
def count_params(kind: str, window: int, basis: Optional[int]) -> None:
    """Print the exact parameter count of a model configuration."""
    kind = ModelKind(kind)
    model = build_model(kind, **_model_overrides(kind, window, basis))
    click.echo(f"params={model.count_params()}")


@cli.command("train")
@click.option("--model", "kind", type=click.Choice(MODEL_CHOICES), default="sdf-tiling", show_default=True)
@click.option("--window", type=click.IntRange(min=1), default=4, show_default=True)
@click.option("--basis", type=click.IntRange(min=1), default=None, help="Basis images n_b (sdf-tiling)")
@click.option("--data", required=True, multiple=True, type=click.Path(exists=True, dir_okay=False),
              help="Training log(s); repeat for several")
@click.option("--epochs", type=click.IntRange(min=1), default=50, show_default=True)
@click.option("--lr", type=click.FloatRange(min=0, min_open=True), default=1e-4, show_default=True)
@click.option("--batch-size", type=click.IntRange(min=1), default=16, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True, help="Initialization and shuffling seed")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory")
@handle_errors
def train(kind: str, window: int, basis: Optional[int], data: Tuple[str, ...], epochs: int, lr: float,
          batch_size: int, seed: int, out: str) -> None:
    """Train a model; writes final.advt, best.advt and loss.csv."""
    kind = ModelKind(kind)
    if kind is ModelKind.COPY_LAST_FRAME:
        raise ConfigurationError("copy-last-frame has no trainable parameters")
    logs = _load_logs(data)
    model = build_model(kind, seed=seed, **_model_overrides(kind, window, basis, logs[0].frame_shape))
    click.echo(f"params={model.count_params()}")
    stats = compute_stats(logs)
    dataset = WindowDataset(logs, window, stats)
    config = TrainConfig(learning_rate=lr, epochs=epochs, batch_size=batch_size, seed=seed)
    result = run_training(model, dataset, config, out_dir=out)
    for epoch, loss in enumerate(result.loss_curve, start=1):
        line = f"epoch={epoch} mean_mse={loss:.6e}"
        if result.validation_curve:
            line += f" val_mse={result.validation_curve[epoch - 1]:.6e}"
        click.echo(line)
    click.echo(f"best_epoch={result.best_epoch} checkpoint={result.final_checkpoint}")


@cli.command("eval")
@checkpoint_option
@baseline_option
@window_option
@click.option("--data", required=True, multiple=True, type=click.Path(exists=True, dir_okay=False),
              help="Test log(s)")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), help="Per-sample CSV output")
@click.option("--name", default=None, help="Model label in the report")
@click.option("--workers", type=click.IntRange(min=1), default=None,
              help="Evaluation threads (default TILING_PREDICTOR_EVAL_WORKERS)")
@handle_errors
def eval_command(checkpoint: Optional[str], baseline: Optional[str], window: Optional[int],
                 data: Tuple[str, ...], csv_path: Optional[str], name: Optional[str],
                 workers: Optional[int]) -> None:
    """Evaluate MSE and SSIM over the windows of the test logs."""
    logs = _load_logs(data)
    model, stats = _resolve_model(checkpoint, baseline, window, logs[0].frame_shape)
    dataset = WindowDataset(logs, model.window, stats)
    report = evaluate(model, dataset, window=window, name=name, workers=workers)
    click.echo(report.to_line())
    if csv_path:
        report.write_csv(csv_path)


@cli.command("predict")
@checkpoint_option
@baseline_option
@window_option
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--start", type=click.IntRange(min=0), default=0, show_default=True,
              help="Index of the oldest history frame")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@handle_errors
def predict_command(checkpoint: Optional[str], baseline: Optional[str], window: Optional[int],
                    data: str, start: int, out: str) -> None:
    """Predict one frame; writes current/pred/gt PGM files."""
    log = load_log(data)
    model, stats = _resolve_model(checkpoint, baseline, window, log.frame_shape)
    history = _history_at(log, start, model.window, 1)
    t = start + model.window - 1
    frame = clamp_frame(predict(model, history, stats.normalize(log.actions[t])).frame)
    target = log.frames[t + 1]
    os.makedirs(out, exist_ok=True)
    write_pgm(os.path.join(out, "current_0000.pgm"), log.frames[t])
    write_pgm(os.path.join(out, "pred_0000.pgm"), frame)
    write_pgm(os.path.join(out, "gt_0000.pgm"), target)
    click.echo(f"t={t} mse_e4={mse_image(frame, target) * 1e4:.4f} ssim={ssim(frame, target):.4f}")


@cli.command("rollout")
@checkpoint_option
@baseline_option
@window_option
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--start", type=click.IntRange(min=0), default=0, show_default=True,
              help="Index of the oldest history frame")
@click.option("--steps", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@handle_errors
def rollout_command(checkpoint: Optional[str], baseline: Optional[str], window: Optional[int],
                    data: str, start: int, steps: int, out: str) -> None:
    """Autoregressive prediction under the logged actions; writes gt/pred PGM pairs."""
    log = load_log(data)
    model, stats = _resolve_model(checkpoint, baseline, window, log.frame_shape)
    history = _history_at(log, start, model.window, steps)
    t = start + model.window - 1
    actions = [stats.normalize(log.actions[t + i]) for i in range(steps)]
    frames = rollout(model, history, actions)
    os.makedirs(out, exist_ok=True)
    for i, frame in enumerate(frames):
        target = log.frames[t + 1 + i]
        write_pgm(os.path.join(out, f"gt_{i:04d}.pgm"), target)
        write_pgm(os.path.join(out, f"pred_{i:04d}.pgm"), frame)
        click.echo(f"step={i} mse_e4={mse_image(frame, target) * 1e4:.4f} ssim={ssim(frame, target):.4f}")


@cli.command("inspect-basis")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--t", "start", type=click.IntRange(min=0), default=0, show_default=True,
              help="Index of the oldest history frame")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@handle_errors
def inspect_basis(checkpoint: str, data: str, start: int, out: str) -> None:
    """Export basis images in descending weight order with a weights CSV."""
    loaded = load_checkpoint(checkpoint)
    model = loaded.model
    if model.kind is not ModelKind.SDF_TILING:
        raise ConfigurationError(f"basis images exist for sdf-tiling checkpoints only, not {model.kind.value}")
    stats = loaded.stats or NormalizationStats.identity()
    log = load_log(data)
    history = _history_at(log, start, model.window, 1)
    t = start + model.window - 1
    prediction = predict(model, history, stats.normalize(log.actions[t]))
    weights = prediction.basis_weights
    order = np.argsort(-weights, kind="stable")

    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "weights.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["rank", "index", "weight", "raw_min", "raw_max"])
        for rank, index in enumerate(order):
            scaled, lo, hi = normalize_for_display(prediction.basis[..., index])
            write_pgm(os.path.join(out, f"basis_{rank:02d}.pgm"), scaled)
            writer.writerow([rank, int(index), repr(float(weights[index])), repr(lo), repr(hi)])
    np.savez(os.path.join(out, "basis.npz"), basis=prediction.basis, weights=weights,
             prediction=prediction.frame)
    write_pgm(os.path.join(out, "current.pgm"), log.frames[t])
    write_pgm(os.path.join(out, "pred.pgm"), clamp_frame(prediction.frame))
    write_pgm(os.path.join(out, "gt.pgm"), log.frames[t + 1])
    click.echo(f"n_basis={len(order)} t={t}")


@cli.command("reference")
@click.option("--params", "show_params", is_flag=True, help="List published parameter counts instead")
def reference(show_params: bool) -> None:
    """Print the published Comma AI results in the report-line format."""
    if show_params:
        for row in REFERENCE_RESULTS:
            if row.params is not None:
                click.echo(f"model={row.model} params={row.params}")
        return
    for line in reference_lines():
        click.echo(line)


def main() -> None:
    """Main entry point for tiling-predictor."""
    cli(prog_name="tiling-predictor")


if __name__ == "__main__":
    main()
