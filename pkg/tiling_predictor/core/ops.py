"""
Differentiable ops for tiling-predictor.

Every op is a pure function of its input tensors: it computes the output with
numpy and, when a ``Tape`` is active, records a closure that maps the output
gradient to input gradients. Image tensors are NHWC (batch, height, width,
channels); convolution weights are ``[k, k, Cin, Cout]``.
"""

from typing import Optional, Sequence, Tuple

import numpy as np

from tiling_predictor.core.tensor import Tensor, as_tensor, record
from tiling_predictor.utils.exceptions import ShapeError


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    """Spatial output size of a strided convolution."""
    return (size + 2 * padding - kernel) // stride + 1


def deconv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    """Spatial output size of a transposed convolution."""
    return (size - 1) * stride - 2 * padding + kernel


def _im2col(padded: np.ndarray, kernel: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    batch, _, _, channels = padded.shape
    cols = np.empty((batch, out_h, out_w, kernel, kernel, channels), dtype=padded.dtype)
    row_stop = stride * (out_h - 1) + 1
    col_stop = stride * (out_w - 1) + 1
    for i in range(kernel):
        for j in range(kernel):
            cols[:, :, :, i, j, :] = padded[:, i:i + row_stop:stride, j:j + col_stop:stride, :]
    return cols.reshape(batch * out_h * out_w, kernel * kernel * channels)


def _col2im(cols: np.ndarray, padded_shape: Tuple[int, ...], kernel: int, stride: int,
            out_h: int, out_w: int) -> np.ndarray:
    batch, _, _, channels = padded_shape
    cols = cols.reshape(batch, out_h, out_w, kernel, kernel, channels)
    padded = np.zeros(padded_shape, dtype=cols.dtype)
    row_stop = stride * (out_h - 1) + 1
    col_stop = stride * (out_w - 1) + 1
    for i in range(kernel):
        for j in range(kernel):
            padded[:, i:i + row_stop:stride, j:j + col_stop:stride, :] += cols[:, :, :, i, j, :]
    return padded


def _check_conv_args(op: str, x: Tensor, weights: Tensor, bias: Optional[Tensor]) -> int:
    if x.data.ndim != 4:
        raise ShapeError(f"{op}: input must be [B,H,W,C], got shape {x.shape}")
    if weights.data.ndim != 4 or weights.shape[0] != weights.shape[1]:
        raise ShapeError(f"{op}: weights must be [k,k,Cin,Cout], got shape {weights.shape}")
    if x.shape[3] != weights.shape[2]:
        raise ShapeError(
            f"{op}: input channels do not match weights; input shape {x.shape}, weights shape {weights.shape}"
        )
    out_channels = weights.shape[3]
    if bias is not None and bias.shape != (out_channels,):
        raise ShapeError(f"{op}: bias shape {bias.shape} does not match weights shape {weights.shape}")
    return weights.shape[0]


def conv2d(x: Tensor, weights: Tensor, bias: Optional[Tensor], stride: int = 2, padding: int = 2) -> Tensor:
    """
    Strided 2-D convolution with symmetric zero padding.

    Args:
        x: Input ``[B,H,W,Cin]``.
        weights: Kernel ``[k,k,Cin,Cout]``.
        bias: ``[Cout]`` or None.
        stride: Stride in both directions.
        padding: Zero padding on every side.

    Returns:
        Output ``[B,H',W',Cout]`` with ``H' = floor((H + 2p - k)/s) + 1``.
    """
    kernel = _check_conv_args("conv2d", x, weights, bias)
    batch, height, width, in_channels = x.shape
    out_channels = weights.shape[3]
    if height + 2 * padding < kernel or width + 2 * padding < kernel:
        raise ShapeError(f"conv2d: input shape {x.shape} is smaller than kernel {kernel} with padding {padding}")
    out_h = conv_output_size(height, kernel, stride, padding)
    out_w = conv_output_size(width, kernel, stride, padding)

    padded = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    cols = _im2col(padded, kernel, stride, out_h, out_w)
    w_mat = weights.data.reshape(kernel * kernel * in_channels, out_channels)
    out = cols @ w_mat
    if bias is not None:
        out += bias.data
    output = Tensor(out.reshape(batch, out_h, out_w, out_channels))

    def backward(grad: np.ndarray):
        grad_2d = grad.reshape(-1, out_channels)
        grad_w = (cols.T @ grad_2d).reshape(weights.shape)
        grad_padded = _col2im(grad_2d @ w_mat.T, padded.shape, kernel, stride, out_h, out_w)
        grad_x = grad_padded[:, padding:padding + height, padding:padding + width, :]
        grad_b = grad_2d.sum(axis=0) if bias is not None else None
        return grad_x, grad_w, grad_b

    inputs = (x, weights, bias) if bias is not None else (x, weights)
    return record("conv2d", inputs, output, backward)


def deconv2d(x: Tensor, weights: Tensor, bias: Optional[Tensor], stride: int = 2, padding: int = 2) -> Tensor:
    """
    Transposed 2-D convolution.

    ``deconv2d(y, W)`` is the adjoint of ``conv2d(., W')`` where ``W'`` is
    ``W`` with its channel axes swapped: for compatible ``x`` and ``y``,
    ``<conv2d(x, W', 0), y> == <x, deconv2d(y, W, 0)>``.

    Args:
        x: Input ``[B,H,W,Cin]``.
        weights: Kernel ``[k,k,Cin,Cout]``.
        bias: ``[Cout]`` or None.
        stride: Stride of the adjoint convolution.
        padding: Padding of the adjoint convolution (cropped from the output).

    Returns:
        Output ``[B,(H-1)s-2p+k,(W-1)s-2p+k,Cout]``.
    """
    kernel = _check_conv_args("deconv2d", x, weights, bias)
    batch, height, width, in_channels = x.shape
    out_channels = weights.shape[3]
    out_h = deconv_output_size(height, kernel, stride, padding)
    out_w = deconv_output_size(width, kernel, stride, padding)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"deconv2d: input shape {x.shape} gives empty output with kernel {kernel}")

    # adjoint conv maps Cout -> Cin with weights [k,k,Cout,Cin]
    adjoint_mat = np.ascontiguousarray(weights.data.swapaxes(2, 3)).reshape(kernel * kernel * out_channels, in_channels)
    x_2d = x.data.reshape(-1, in_channels)
    padded_shape = (batch, out_h + 2 * padding, out_w + 2 * padding, out_channels)
    padded = _col2im(x_2d @ adjoint_mat.T, padded_shape, kernel, stride, height, width)
    out = padded[:, padding:padding + out_h, padding:padding + out_w, :]
    if bias is not None:
        out = out + bias.data
    output = Tensor(out)

    def backward(grad: np.ndarray):
        grad_padded = np.pad(grad, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
        cols = _im2col(grad_padded, kernel, stride, height, width)
        grad_x = (cols @ adjoint_mat).reshape(x.shape)
        grad_adjoint = (cols.T @ x_2d).reshape(kernel, kernel, out_channels, in_channels)
        grad_w = np.ascontiguousarray(grad_adjoint.swapaxes(2, 3))
        grad_b = grad.sum(axis=(0, 1, 2)) if bias is not None else None
        return grad_x, grad_w, grad_b

    inputs = (x, weights, bias) if bias is not None else (x, weights)
    return record("deconv2d", inputs, output, backward)


def relu(x: Tensor) -> Tensor:
    """Elementwise ``max(0, x)``."""
    mask = x.data > 0
    output = Tensor(np.where(mask, x.data, 0).astype(x.dtype, copy=False))
    return record("relu", (x,), output, lambda grad: (grad * mask,))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last axis: channels of ``a`` followed by channels of ``b``."""
    if a.data.ndim != b.data.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_channels: leading dimensions differ; shapes {a.shape} and {b.shape}")
    split = a.shape[-1]
    output = Tensor(np.concatenate([a.data, b.data.astype(a.dtype, copy=False)], axis=-1))
    return record("concat_channels", (a, b), output, lambda grad: (grad[..., :split], grad[..., split:]))


def linear_combine(basis: Tensor, weights: Tensor) -> Tensor:
    """
    Weighted sum of basis channels without bias.

    Args:
        basis: ``[B,H,W,n_b]``.
        weights: ``[n_b]``.

    Returns:
        ``[B,H,W,1]`` with ``out = sum_i weights[i] * basis[..., i]``.
    """
    if weights.data.ndim != 1 or basis.shape[-1] != weights.shape[0]:
        raise ShapeError(
            f"linear_combine: {weights.shape} weights for basis of shape {basis.shape}"
        )
    output = Tensor((basis.data @ weights.data)[..., np.newaxis])

    def backward(grad: np.ndarray):
        grad_basis = grad * weights.data
        axes = tuple(range(basis.data.ndim - 1))
        grad_weights = np.tensordot(grad[..., 0], basis.data, axes=(axes, axes))
        return grad_basis, grad_weights

    return record("linear_combine", (basis, weights), output, backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along ``axis``."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=axis, keepdims=True)
    output = Tensor(out)

    def backward(grad: np.ndarray):
        return (out * (grad - (grad * out).sum(axis=axis, keepdims=True)),)

    return record("softmax", (x,), output, backward)


def softmax_channels(x: Tensor) -> Tensor:
    """Per-pixel softmax across the channel axis."""
    return softmax(x, axis=-1)


def mse_loss(pred: Tensor, target) -> Tensor:
    """
    Mean of squared elementwise differences.

    Returns:
        Scalar tensor; gradient w.r.t. ``pred`` is ``2 (pred - target) / N``.
    """
    target = as_tensor(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction shape {pred.shape} does not match target shape {target.shape}")
    diff = pred.data - target.data
    count = diff.size
    output = Tensor(np.asarray(np.mean(diff * diff), dtype=pred.dtype))

    def backward(grad: np.ndarray):
        grad_pred = (2.0 / count) * grad * diff
        return grad_pred, -grad_pred

    return record("mse_loss", (pred, target), output, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    output = Tensor(a.data + b.data)
    return record("add", (a, b), output, lambda grad: (grad, grad))


def multiply(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"multiply: shapes {a.shape} and {b.shape} differ")
    output = Tensor(a.data * b.data)
    return record("multiply", (a, b), output, lambda grad: (grad * b.data, grad * a.data))


def reduce_sum(x: Tensor) -> Tensor:
    """Sum of all elements as a scalar tensor."""
    output = Tensor(np.asarray(x.data.sum(), dtype=x.dtype))
    return record("reduce_sum", (x,), output, lambda grad: (np.broadcast_to(grad, x.shape).copy(),))


def sum_channels(x: Tensor) -> Tensor:
    """Sum over the last axis, keeping it with size 1."""
    output = Tensor(x.data.sum(axis=-1, keepdims=True))
    return record("sum_channels", (x,), output, lambda grad: (np.broadcast_to(grad, x.shape).copy(),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Row-major reshape."""
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}")
    output = Tensor(out)
    return record("reshape", (x,), output, lambda grad: (grad.reshape(x.shape),))


def dense(x: Tensor, weights: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    Fully connected layer.

    Args:
        x: ``[B,n]``.
        weights: ``[n,m]``.
        bias: ``[m]`` or None.
    """
    if x.data.ndim != 2 or weights.data.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense: input shape {x.shape} does not match weights shape {weights.shape}")
    if bias is not None and bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense: bias shape {bias.shape} does not match weights shape {weights.shape}")
    out = x.data @ weights.data
    if bias is not None:
        out += bias.data
    output = Tensor(out)

    def backward(grad: np.ndarray):
        grad_b = grad.sum(axis=0) if bias is not None else None
        return grad @ weights.data.T, x.data.T @ grad, grad_b

    inputs = (x, weights, bias) if bias is not None else (x, weights)
    return record("dense", inputs, output, backward)


def tile(vectors: Tensor, height: int, width: int) -> Tensor:
    """
    Replicate each ``[B,C]`` vector over a ``height x width`` grid.

    Returns:
        ``[B,height,width,C]``, spatially constant per batch entry.
    """
    if vectors.data.ndim != 2:
        raise ShapeError(f"tile: expected [B,C] vectors, got shape {vectors.shape}")
    batch, channels = vectors.shape
    out = np.broadcast_to(vectors.data[:, np.newaxis, np.newaxis, :], (batch, height, width, channels)).copy()
    output = Tensor(out)
    return record("tile", (vectors,), output, lambda grad: (grad.sum(axis=(1, 2)),))


def replicate_pad(x: Tensor, padding: int) -> Tensor:
    """Pad ``[B,H,W,C]`` spatially by repeating edge pixels."""
    if x.data.ndim != 4:
        raise ShapeError(f"replicate_pad: expected [B,H,W,C], got shape {x.shape}")
    p = padding
    height, width = x.shape[1], x.shape[2]
    output = Tensor(np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0)), mode="edge"))

    def backward(grad: np.ndarray):
        rows = grad[:, p:p + height].copy()
        rows[:, 0] += grad[:, :p].sum(axis=1)
        rows[:, -1] += grad[:, p + height:].sum(axis=1)
        cols = rows[:, :, p:p + width].copy()
        cols[:, :, 0] += rows[:, :, :p].sum(axis=2)
        cols[:, :, -1] += rows[:, :, p + width:].sum(axis=2)
        return (cols,)

    return record("replicate_pad", (x,), output, backward)


def depthwise_correlate(x: Tensor, kernels: Tensor) -> Tensor:
    """
    Valid cross-correlation of a single-channel image with ``m`` kernels.

    Args:
        x: ``[B,H,W,1]``.
        kernels: ``[m,k,k]``.

    Returns:
        ``[B,H-k+1,W-k+1,m]`` with
        ``out[b,h,w,c] = sum_ij x[b,h+i,w+j,0] * kernels[c,i,j]``.
    """
    if x.data.ndim != 4 or x.shape[3] != 1:
        raise ShapeError(f"depthwise_correlate: expected [B,H,W,1] input, got shape {x.shape}")
    if kernels.data.ndim != 3 or kernels.shape[1] != kernels.shape[2]:
        raise ShapeError(f"depthwise_correlate: expected [m,k,k] kernels, got shape {kernels.shape}")
    k = kernels.shape[1]
    out_h, out_w = x.shape[1] - k + 1, x.shape[2] - k + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"depthwise_correlate: input shape {x.shape} smaller than kernels {kernels.shape}")
    out = np.zeros((x.shape[0], out_h, out_w, kernels.shape[0]), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            out += x.data[:, i:i + out_h, j:j + out_w, :] * kernels.data[:, i, j]
    output = Tensor(out)

    def backward(grad: np.ndarray):
        grad_x = np.zeros_like(x.data)
        grad_k = np.zeros_like(kernels.data)
        for i in range(k):
            for j in range(k):
                window = x.data[:, i:i + out_h, j:j + out_w, :]
                grad_x[:, i:i + out_h, j:j + out_w, 0] += grad @ kernels.data[:, i, j]
                grad_k[:, i, j] = (grad * window).sum(axis=(0, 1, 2))
        return grad_x, grad_k

    return record("depthwise_correlate", (x, kernels), output, backward)
