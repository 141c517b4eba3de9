"""
Model checkpoints in the ADVT container format.

Layout (all integers little-endian)::

    magic "ADVT" | version u32 | kind u32 (0 sdf-tiling, 1 sdf, 2 copy)
    config_len u32 | config JSON (UTF-8, sorted keys)
    n_params u32
    per parameter: name_len u32 | name UTF-8 | rank u32 | dims u32[rank] | data f32[...]
    has_optimizer u32
    if has_optimizer: step u64 | m f32[...] and v f32[...] per parameter, in order

The config JSON is ``{"config": <model config>, "normalization": <stats or null>}``.
"""

import json
import os
import struct
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from tiling_predictor.data.windows import NormalizationStats
from tiling_predictor.models.configs import ModelKind, make_config
from tiling_predictor.models.zoo import PredictiveModel, build_model
from tiling_predictor.training.adam import AdamState
from tiling_predictor.utils.exceptions import CheckpointError, ConfigurationError
from tiling_predictor.utils.logger import get_logger

logger = get_logger(__name__)

CHECKPOINT_MAGIC = b"ADVT"
CHECKPOINT_VERSION = 1
KIND_CODES = {ModelKind.SDF_TILING: 0, ModelKind.SDF_VECTOR: 1, ModelKind.COPY_LAST_FRAME: 2}
_CODE_KINDS = {code: kind for kind, code in KIND_CODES.items()}


@dataclass
class Checkpoint:
    """A loaded model with its action normalization and optional optimizer state."""
    model: PredictiveModel
    stats: Optional[NormalizationStats] = None
    optimizer: Optional[AdamState] = None


def _f32(array: np.ndarray) -> bytes:
    return np.ascontiguousarray(array, dtype="<f4").tobytes()


def save_checkpoint(model: PredictiveModel, path: str, stats: Optional[NormalizationStats] = None,
                    optimizer: Optional[AdamState] = None) -> None:
    """
    Write a model (and optionally normalization and Adam state) to ``path``.

    Parameter data is stored as float32 regardless of the model's precision.
    """
    header = {
        "config": model.config.model_dump(mode="json"),
        "normalization": stats.model_dump(mode="json") if stats is not None else None,
    }
    config_blob = json.dumps(header, sort_keys=True).encode("utf-8")
    params = model.parameters()

    chunks: List[bytes] = [
        CHECKPOINT_MAGIC,
        struct.pack("<III", CHECKPOINT_VERSION, KIND_CODES[model.kind], len(config_blob)),
        config_blob,
        struct.pack("<I", len(params)),
    ]
    for p in params:
        name = p.name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name)))
        chunks.append(name)
        chunks.append(struct.pack(f"<I{len(p.shape)}I", len(p.shape), *p.shape))
        chunks.append(_f32(p.data))

    if optimizer is None:
        chunks.append(struct.pack("<I", 0))
    else:
        chunks.append(struct.pack("<IQ", 1, optimizer.step))
        for p in params:
            chunks.append(_f32(optimizer.m.get(p.name, np.zeros_like(p.data))))
            chunks.append(_f32(optimizer.v.get(p.name, np.zeros_like(p.data))))

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(b"".join(chunks))
    logger.info("wrote checkpoint", path=path, kind=model.kind.value, params=model.count_params())


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.path = path
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        end = self.offset + n
        if end > len(self.blob):
            raise CheckpointError(
                f"{self.path}: truncated while reading {what}; expected {end} bytes, got {len(self.blob)}"
            )
        chunk = self.blob[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str, what: str) -> Tuple:
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))

    def floats(self, shape: Tuple[int, ...], what: str) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self.take(4 * count, what), dtype="<f4").astype(np.float32).reshape(shape)


def load_checkpoint(path: str, model: Optional[PredictiveModel] = None) -> Checkpoint:
    """
    Read a checkpoint.

    Args:
        path: Checkpoint file.
        model: Model to load into; its kind, parameter names and shapes must
            match. A model is built from the stored config when omitted.

    Returns:
        Loaded checkpoint.

    Raises:
        CheckpointError: Bad magic/version, truncation, or a parameter whose
            name or shape does not match the model (the first offending one
            is named).
    """
    with open(path, "rb") as f:
        reader = _Reader(f.read(), path)
    magic = reader.take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    version, code, config_len = reader.unpack("<III", "header")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}, expected {CHECKPOINT_VERSION}")
    if code not in _CODE_KINDS:
        raise CheckpointError(f"{path}: unknown model kind tag {code}")
    kind = _CODE_KINDS[code]
    try:
        header = json.loads(reader.take(config_len, "config block").decode("utf-8"))
        config = make_config(kind, **header["config"])
        stats = NormalizationStats(**header["normalization"]) if header.get("normalization") else None
    except (ValueError, KeyError, TypeError, ConfigurationError) as e:
        raise CheckpointError(f"{path}: invalid config block: {e}")

    if model is None:
        model = build_model(kind, config)
    elif model.kind is not kind:
        raise CheckpointError(f"{path}: checkpoint holds a {kind.value} model, not {model.kind.value}")

    params = model.parameters()
    (n_params,) = reader.unpack("<I", "parameter count")
    if n_params != len(params):
        raise CheckpointError(f"{path}: {n_params} parameters stored, model has {len(params)}")
    loaded = []
    for expected in params:
        (name_len,) = reader.unpack("<I", "parameter name length")
        name = reader.take(name_len, "parameter name").decode("utf-8")
        (rank,) = reader.unpack("<I", f"rank of {name}")
        shape = reader.unpack(f"<{rank}I", f"shape of {name}") if rank else ()
        if name != expected.name or tuple(shape) != expected.shape:
            raise CheckpointError(
                f"{path}: parameter {name!r} with shape {tuple(shape)} does not match "
                f"model parameter {expected.name!r} with shape {expected.shape}"
            )
        loaded.append(reader.floats(tuple(shape), name))

    (has_optimizer,) = reader.unpack("<I", "optimizer flag")
    optimizer = None
    if has_optimizer:
        (step,) = reader.unpack("<Q", "optimizer step")
        optimizer = AdamState(step=int(step))
        for p in params:
            optimizer.m[p.name] = reader.floats(p.shape, f"first moment of {p.name}")
            optimizer.v[p.name] = reader.floats(p.shape, f"second moment of {p.name}")
    if reader.offset != len(reader.blob):
        raise CheckpointError(f"{path}: {len(reader.blob) - reader.offset} trailing bytes")

    for p, data in zip(params, loaded):
        p.data = data.astype(p.dtype, copy=False)
        p.zero_grad()
    logger.debug("loaded checkpoint", path=path, kind=kind.value, params=model.count_params())
    return Checkpoint(model=model, stats=stats, optimizer=optimizer)
