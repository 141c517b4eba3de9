"""
Tensor core for tiling-predictor.

This module provides the numpy-backed ``Tensor`` value type, trainable
``Parameter`` tensors, the ``ModelGraph`` parameter registry and the ``Tape``
that records executed ops for reverse-mode differentiation.
"""

import contextvars
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from tiling_predictor.utils.exceptions import ConfigurationError, GradientError, ShapeError

DEFAULT_DTYPE = np.float32
PRECISIONS = {"float32": np.float32, "float64": np.float64}

_active_tape: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar("active_tape", default=None)


class Tensor:
    """
    Dense row-major tensor of rank up to 4 (batch, height, width, channels).

    Tensors are values: ops never modify their inputs. Only ``Parameter``
    data is updated in place, and only by the optimizer.
    """

    __slots__ = ("data", "name")

    def __init__(self, data, dtype=None, name: Optional[str] = None):
        """
        Wrap an array.

        Args:
            data: Array-like contents.
            dtype: Target dtype; defaults to the array's float dtype, or
                float32 for non-float input.
            name: Optional label used in diagnostics.
        """
        array = np.asarray(data)
        if dtype is None:
            dtype = array.dtype if array.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.ascontiguousarray(array, dtype=dtype)
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), dtype=dtype, name=self.name)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"


class Parameter(Tensor):
    """Trainable tensor with an accumulated gradient of the same shape."""

    __slots__ = ("grad",)

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, dtype=dtype, name=name)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape}, dtype={self.dtype})"


class ModelGraph:
    """Ordered registry of the named parameters of one model."""

    def __init__(self):
        self._parameters: Dict[str, Parameter] = {}

    def add(self, name: str, data, dtype=None) -> Parameter:
        """
        Register a new parameter.

        Args:
            name: Unique parameter name.
            data: Initial value.
            dtype: Optional dtype.

        Returns:
            The created parameter.
        """
        if name in self._parameters:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        parameter = Parameter(data, name=name, dtype=dtype)
        self._parameters[name] = parameter
        return parameter

    def __getitem__(self, name: str) -> Parameter:
        return self._parameters[name]

    def __contains__(self, name: str) -> bool:
        return name in self._parameters

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._parameters.values())

    def __len__(self) -> int:
        return len(self._parameters)

    def names(self) -> List[str]:
        return list(self._parameters)

    def count(self) -> int:
        return sum(p.size for p in self._parameters.values())

    def zero_grad(self) -> None:
        for parameter in self._parameters.values():
            parameter.zero_grad()

    def astype(self, dtype) -> None:
        for parameter in self._parameters.values():
            parameter.data = parameter.data.astype(dtype)
            parameter.grad = np.zeros_like(parameter.data)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class _Record:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, backward_fn: BackwardFn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """
    Ordered record of executed ops.

    Use as a context manager; ops executed inside the ``with`` block record
    themselves on this tape. Each thread or context has its own active tape.

    Example:
        with Tape() as tape:
            loss = mse_loss(model_output, target)
        tape.backward(loss)
    """

    def __init__(self):
        self.records: List[_Record] = []
        self._gradients: Dict[int, np.ndarray] = {}
        self._tensors: Dict[int, Tensor] = {}
        self._token: Optional[contextvars.Token] = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, backward_fn: BackwardFn) -> None:
        self.records.append(_Record(op, inputs, output, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """
        Propagate d(loss)/d(x) to every tensor recorded on the tape.

        Parameter gradients are accumulated into ``Parameter.grad``; other
        tensors' gradients are available through ``gradient``.

        Args:
            loss: Scalar output of a recorded op.
        """
        if loss.size != 1:
            raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not any(record.output is loss for record in self.records):
            raise GradientError("loss was not produced by an op recorded on this tape")

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        tensors: Dict[int, Tensor] = {id(loss): loss}

        for record in reversed(self.records):
            upstream = grads.get(id(record.output))
            if upstream is None:
                continue
            input_grads = record.backward_fn(upstream)
            for tensor, grad in zip(record.inputs, input_grads):
                if grad is None:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad
                    tensors[key] = tensor

        for key, tensor in tensors.items():
            if isinstance(tensor, Parameter):
                tensor.grad = tensor.grad + grads[key].astype(tensor.dtype, copy=False)

        self._gradients = grads
        self._tensors = tensors

    def gradient(self, tensor: Tensor) -> np.ndarray:
        """
        Gradient of the last ``backward`` loss with respect to ``tensor``.

        Tensors the loss does not depend on get zeros.
        """
        grad = self._gradients.get(id(tensor))
        if grad is None or self._tensors.get(id(tensor)) is not tensor:
            return np.zeros_like(tensor.data)
        return grad


def active_tape() -> Optional[Tape]:
    """Return the tape recording in the current context, if any."""
    return _active_tape.get()


def record(op: str, inputs: Tuple[Tensor, ...], output: Tensor, backward_fn: BackwardFn) -> Tensor:
    """Record ``output`` on the active tape (no-op without one) and return it."""
    tape = _active_tape.get()
    if tape is not None:
        tape.record(op, inputs, output, backward_fn)
    return output


def as_tensor(value, dtype=None) -> Tensor:
    """Promote arrays to tensors; tensors pass through unchanged."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def resolve_precision(precision: str):
    """Map a precision name (``float32``/``float64``) to a numpy dtype."""
    try:
        return PRECISIONS[precision]
    except KeyError:
        raise ConfigurationError(f"unknown precision {precision!r}; expected one of {sorted(PRECISIONS)}")
