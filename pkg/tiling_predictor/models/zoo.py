"""
Prediction models for tiling-predictor.

This module builds the single-decoder feedforward models (action tiling and
dense action encoding) and the copy-last-frame baseline, and provides the
inference helpers ``predict`` and ``rollout``.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from tiling_predictor.core import ops
from tiling_predictor.core.tensor import ModelGraph, Parameter, Tensor, as_tensor, resolve_precision
from tiling_predictor.models.configs import (
    CopyLastFrameConfig,
    ModelConfig,
    ModelKind,
    SdfTilingConfig,
    SdfVectorConfig,
    make_config,
)
from tiling_predictor.utils.exceptions import ConfigurationError, ShapeError
from tiling_predictor.utils.logger import get_logger

logger = get_logger(__name__)


@dataclass
class ForwardResult:
    """Batched model output; ``basis``/``weights`` only for SDF-tiling."""
    frame: Tensor
    basis: Optional[Tensor] = None
    weights: Optional[Tensor] = None


@dataclass
class Prediction:
    """
    Single-sample prediction.

    ``frame`` is raw model output ``[H,W,1]`` (not clamped). For SDF-tiling,
    ``frame`` is ``linear_combine(basis, basis_weights)``.
    """
    frame: np.ndarray
    basis: Optional[np.ndarray] = None
    basis_weights: Optional[np.ndarray] = None


def clamp_frame(frame: np.ndarray) -> np.ndarray:
    """Clamp pixel values to [0, 1] for export, rollout and metrics."""
    return np.clip(frame, 0.0, 1.0)


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class PredictiveModel:
    """
    Base class for next-frame predictors ``F(history, action)``.

    Subclasses implement ``forward`` on batches:
    histories ``[B,H,W,window]`` (oldest frame first) and actions ``[B,A]``.
    """

    kind: ModelKind

    def __init__(self, config: ModelConfig, graph: Optional[ModelGraph] = None):
        self.config = config
        self.graph = graph if graph is not None else ModelGraph()

    @property
    def window(self) -> int:
        return self.config.window

    @property
    def frame_shape(self):
        return self.config.input_height, self.config.input_width

    @property
    def dtype(self):
        for parameter in self.graph:
            return parameter.dtype
        return np.dtype(np.float32)

    def parameters(self) -> List[Parameter]:
        return list(self.graph)

    def count_params(self) -> int:
        return self.graph.count()

    def to_precision(self, precision: str) -> "PredictiveModel":
        """Cast all parameters to ``float32`` or ``float64`` in place."""
        self.graph.astype(resolve_precision(precision))
        return self

    def _inputs(self, histories, actions):
        histories = as_tensor(histories)
        actions = as_tensor(actions)
        expected = (self.config.input_height, self.config.input_width, self.window)
        if histories.data.ndim != 4 or histories.shape[1:] != expected:
            raise ShapeError(f"history batch shape {histories.shape} does not match [B,{','.join(map(str, expected))}]")
        if actions.shape != (histories.shape[0], self.config.action_dim):
            raise ShapeError(f"action batch shape {actions.shape} does not match history batch {histories.shape}")
        dtype = self.dtype
        if histories.dtype != dtype:
            histories = histories.astype(dtype)
        if actions.dtype != dtype:
            actions = actions.astype(dtype)
        return histories, actions

    def forward(self, histories, actions) -> ForwardResult:
        raise NotImplementedError

    def _encoder(self, rng: np.random.Generator, in_channels: int, channels: Sequence[int], kernel: int) -> None:
        for n, out_channels in enumerate(channels, start=1):
            shape = (kernel, kernel, in_channels, out_channels)
            self.graph.add(f"encoder.conv{n}.weight",
                           _glorot(rng, shape, kernel * kernel * in_channels, kernel * kernel * out_channels))
            self.graph.add(f"encoder.conv{n}.bias", np.zeros(out_channels, dtype=np.float32))
            in_channels = out_channels

    def _decoder(self, rng: np.random.Generator, in_channels: int, channels: Sequence[int], kernel: int) -> None:
        for n, out_channels in enumerate(channels, start=1):
            shape = (kernel, kernel, in_channels, out_channels)
            self.graph.add(f"decoder.deconv{n}.weight",
                           _glorot(rng, shape, kernel * kernel * in_channels, kernel * kernel * out_channels))
            self.graph.add(f"decoder.deconv{n}.bias", np.zeros(out_channels, dtype=np.float32))
            in_channels = out_channels

    def encode(self, histories: Tensor) -> Tensor:
        """Three conv + ReLU stages: ``[B,H,W,window]`` to ``[B,H/8,W/8,C]``."""
        cfg = self.config
        h = histories
        for n in range(1, 4):
            h = ops.relu(ops.conv2d(h, self.graph[f"encoder.conv{n}.weight"], self.graph[f"encoder.conv{n}.bias"],
                                    stride=cfg.stride, padding=cfg.padding))
        return h

    def _deconv(self, h: Tensor, n: int) -> Tensor:
        cfg = self.config
        return ops.deconv2d(h, self.graph[f"decoder.deconv{n}.weight"], self.graph[f"decoder.deconv{n}.bias"],
                            stride=cfg.stride, padding=cfg.padding)


def tile_action(action, height: int, width: int) -> Tensor:
    """
    Tile an action over a spatial grid.

    Args:
        action: ``[A]`` vector or ``[B,A]`` batch.
        height: Grid height.
        width: Grid width.

    Returns:
        ``[height,width,A]`` (or ``[B,height,width,A]``) with every pixel equal
        to the action.
    """
    action = as_tensor(action)
    if action.data.ndim == 1:
        batched = ops.reshape(action, (1, action.shape[0]))
        return ops.reshape(ops.tile(batched, height, width), (height, width, action.shape[0]))
    return ops.tile(action, height, width)


class SdfTilingModel(PredictiveModel):
    """
    Conv encoder, action tiling merge, deconv decoder and a linear basis head.
    """

    kind = ModelKind.SDF_TILING

    def merge(self, features: Tensor, actions: Tensor) -> Tensor:
        """Concatenate tiled actions onto the bottleneck feature map."""
        tiled = tile_action(actions, features.shape[1], features.shape[2])
        return ops.concat_channels(features, tiled)

    def forward(self, histories, actions) -> ForwardResult:
        histories, actions = self._inputs(histories, actions)
        h = self.merge(self.encode(histories), actions)
        for n in range(1, 4):
            h = ops.relu(self._deconv(h, n))
        weights = self.graph["head.basis_weights"]
        return ForwardResult(frame=ops.linear_combine(h, weights), basis=h, weights=weights)


class SdfVectorModel(PredictiveModel):
    """
    Conv encoder, four fully connected layers with a multiplicative action
    interaction in the middle, deconv decoder to a single channel.
    """

    kind = ModelKind.SDF_VECTOR

    def forward(self, histories, actions) -> ForwardResult:
        cfg = self.config
        histories, actions = self._inputs(histories, actions)
        g = self.graph
        features = self.encode(histories)
        batch = features.shape[0]
        h = ops.reshape(features, (batch, cfg.flat_features))
        h = ops.relu(ops.dense(h, g["fc1.weight"], g["fc1.bias"]))
        h = ops.dense(h, g["fc2.weight"], g["fc2.bias"])
        a = ops.dense(actions, g["action_embed.weight"])
        h = ops.multiply(h, a)
        h = ops.relu(ops.dense(h, g["fc3.weight"], g["fc3.bias"]))
        h = ops.relu(ops.dense(h, g["fc4.weight"], g["fc4.bias"]))
        bottleneck_h, bottleneck_w = cfg.bottleneck_shape
        h = ops.reshape(h, (batch, bottleneck_h, bottleneck_w, cfg.encoder_channels[2]))
        h = ops.relu(self._deconv(h, 1))
        h = ops.relu(self._deconv(h, 2))
        return ForwardResult(frame=self._deconv(h, 3))


class CopyLastFrameModel(PredictiveModel):
    """Predicts that the next frame equals the newest history frame."""

    kind = ModelKind.COPY_LAST_FRAME

    def forward(self, histories, actions) -> ForwardResult:
        histories, _ = self._inputs(histories, actions)
        return ForwardResult(frame=Tensor(histories.data[..., -1:]))


def build_sdf_tiling(config: SdfTilingConfig, seed: int = 0) -> SdfTilingModel:
    """
    Build an SDF-tiling model.

    Topology: conv(W->c1) relu conv(c1->c2) relu conv(c2->c3) relu,
    concat(tile(action)), deconv(c3+A->d1) relu deconv(d1->d2) relu
    deconv(d2->n_b) relu, linear_combine(n_b) without bias.

    Args:
        config: Validated config.
        seed: Initialization seed.

    Returns:
        Initialized model (float32).
    """
    if not isinstance(config, SdfTilingConfig):
        raise ConfigurationError(f"expected SdfTilingConfig, got {type(config).__name__}")
    rng = np.random.default_rng(seed)
    model = SdfTilingModel(config)
    k = config.kernel
    model._encoder(rng, config.window, config.encoder_channels, k)
    model._decoder(rng, config.encoder_channels[2] + config.action_dim, config.decoder_channels, k)
    model.graph.add("head.basis_weights", _glorot(rng, (config.n_basis,), config.n_basis, 1))
    logger.debug("built model", kind=model.kind.value, params=model.count_params(), seed=seed)
    return model


def build_sdf_vector(config: SdfVectorConfig, seed: int = 0) -> SdfVectorModel:
    """
    Build an SDF model with dense (vector) action encoding.

    Args:
        config: Validated config.
        seed: Initialization seed.

    Returns:
        Initialized model (float32).
    """
    if not isinstance(config, SdfVectorConfig):
        raise ConfigurationError(f"expected SdfVectorConfig, got {type(config).__name__}")
    rng = np.random.default_rng(seed)
    model = SdfVectorModel(config)
    k = config.kernel
    hidden = config.hidden_width
    flat = config.flat_features
    model._encoder(rng, config.window, config.encoder_channels, k)
    g = model.graph
    g.add("fc1.weight", _glorot(rng, (flat, hidden), flat, hidden))
    g.add("fc1.bias", np.zeros(hidden, dtype=np.float32))
    g.add("fc2.weight", _glorot(rng, (hidden, hidden), hidden, hidden))
    g.add("fc2.bias", np.zeros(hidden, dtype=np.float32))
    g.add("action_embed.weight", _glorot(rng, (config.action_dim, hidden), config.action_dim, hidden))
    g.add("fc3.weight", _glorot(rng, (hidden, hidden), hidden, hidden))
    g.add("fc3.bias", np.zeros(hidden, dtype=np.float32))
    g.add("fc4.weight", _glorot(rng, (hidden, flat), hidden, flat))
    g.add("fc4.bias", np.zeros(flat, dtype=np.float32))
    model._decoder(rng, config.encoder_channels[2], tuple(config.decoder_channels) + (1,), k)
    logger.debug("built model", kind=model.kind.value, params=model.count_params(), seed=seed)
    return model


def build_copy_last_frame(config: CopyLastFrameConfig) -> CopyLastFrameModel:
    """Build the parameter-free copy-last-frame baseline."""
    return CopyLastFrameModel(config)


def build_model(kind: Union[ModelKind, str], config: Optional[ModelConfig] = None, seed: int = 0,
                **overrides) -> PredictiveModel:
    """
    Build any model kind.

    Args:
        kind: Model kind.
        config: Config; built from ``overrides`` when omitted.
        seed: Initialization seed.
        **overrides: Config fields used when ``config`` is omitted.
    """
    kind = ModelKind(kind)
    if config is None:
        config = make_config(kind, **overrides)
    if kind is ModelKind.SDF_TILING:
        return build_sdf_tiling(config, seed)
    if kind is ModelKind.SDF_VECTOR:
        return build_sdf_vector(config, seed)
    return build_copy_last_frame(config)


def count_params(model: PredictiveModel) -> int:
    """Exact number of trainable scalars."""
    return model.count_params()


def predict(model: PredictiveModel, history: np.ndarray, action: np.ndarray) -> Prediction:
    """
    Predict the next frame from one history window and action.

    Args:
        model: Predictor.
        history: ``[H,W,window]`` frames, oldest first.
        action: Normalized ``[A]`` action.

    Returns:
        Unclamped prediction with basis decomposition for SDF-tiling.
    """
    history = np.asarray(history)
    expected = (model.config.input_height, model.config.input_width, model.window)
    if history.shape != expected:
        raise ShapeError(f"history shape {history.shape} does not match expected window {expected}")
    result = model.forward(history[np.newaxis], np.asarray(action).reshape(1, -1))
    if result.basis is None:
        return Prediction(frame=result.frame.data[0])
    return Prediction(frame=result.frame.data[0], basis=result.basis.data[0],
                      basis_weights=result.weights.data.copy())


def rollout(model: PredictiveModel, history: np.ndarray, actions: Sequence[np.ndarray]) -> List[np.ndarray]:
    """
    Autoregressive multi-step prediction.

    Each clamped prediction is appended to the window and the oldest frame is
    dropped.

    Args:
        model: Predictor.
        history: Initial ``[H,W,window]`` frames.
        actions: Normalized actions, one per step.

    Returns:
        One clamped ``[H,W,1]`` frame per action.
    """
    if len(actions) == 0:
        raise ConfigurationError("rollout needs at least one action")
    window = np.asarray(history)
    frames = []
    for action in actions:
        frame = clamp_frame(predict(model, window, action).frame).astype(window.dtype, copy=False)
        frames.append(frame)
        window = np.concatenate([window[..., 1:], frame], axis=-1)
    return frames
