"""Dense tensors with reverse-mode automatic differentiation."""

from tiling_predictor.core.ops import (
    add,
    concat_channels,
    conv2d,
    deconv2d,
    dense,
    depthwise_correlate,
    linear_combine,
    mse_loss,
    multiply,
    reduce_sum,
    relu,
    replicate_pad,
    reshape,
    softmax,
    softmax_channels,
    sum_channels,
    tile,
)
from tiling_predictor.core.tensor import ModelGraph, Parameter, Tape, Tensor, active_tape

__all__ = [
    "ModelGraph",
    "Parameter",
    "Tape",
    "Tensor",
    "active_tape",
    "add",
    "concat_channels",
    "conv2d",
    "deconv2d",
    "dense",
    "depthwise_correlate",
    "linear_combine",
    "mse_loss",
    "multiply",
    "reduce_sum",
    "relu",
    "replicate_pad",
    "reshape",
    "softmax",
    "softmax_channels",
    "sum_channels",
    "tile",
]
