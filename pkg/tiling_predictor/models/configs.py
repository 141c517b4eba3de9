"""
Model configuration schemas
"""

from enum import Enum
from typing import Any, Dict, Tuple, Type, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from tiling_predictor.core.ops import conv_output_size, deconv_output_size
from tiling_predictor.utils.exceptions import ConfigurationError


class ModelKind(str, Enum):
    """Prediction model kinds"""
    SDF_TILING = "sdf-tiling"
    SDF_VECTOR = "sdf"
    COPY_LAST_FRAME = "copy"


class FrameConfig(BaseModel):
    """
    Settings shared by every model: history window and frame geometry
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    window: int = Field(4, ge=1, description="Number of past frames stacked channel-wise")
    input_height: int = Field(80, ge=1, description="Frame height in pixels")
    input_width: int = Field(160, ge=1, description="Frame width in pixels")
    action_dim: int = Field(3, ge=1, description="Action components (acceleration, steering, brake)")


def _check_encoder_decoder(height: int, width: int, stages: int, kernel: int, stride: int, padding: int) -> None:
    factor = stride ** stages
    if height % factor or width % factor:
        raise ValueError(
            f"input size {height}x{width} must be divisible by {factor} ({stages} stride-{stride} stages)"
        )
    h, w = height, width
    for _ in range(stages):
        h, w = conv_output_size(h, kernel, stride, padding), conv_output_size(w, kernel, stride, padding)
    for _ in range(stages):
        h, w = deconv_output_size(h, kernel, stride, padding), deconv_output_size(w, kernel, stride, padding)
    if (h, w) != (height, width):
        raise ValueError(
            f"kernel={kernel} stride={stride} padding={padding} does not map {height}x{width} back to itself"
        )


class SdfTilingConfig(FrameConfig):
    """
    Single-decoder feedforward model with action tiling
    """
    encoder_channels: Tuple[int, int, int] = Field((64, 64, 64), description="Output depth of the 3 conv layers")
    decoder_channels: Tuple[int, int, int] = Field(
        (80, 80, 80), description="Output depth of the 3 deconv layers; the last is the basis count n_b"
    )
    kernel: int = Field(6, ge=1)
    stride: int = Field(2, ge=1)
    padding: int = Field(2, ge=0)

    @property
    def n_basis(self) -> int:
        return self.decoder_channels[2]

    @property
    def bottleneck_shape(self) -> Tuple[int, int]:
        factor = self.stride ** 3
        return self.input_height // factor, self.input_width // factor

    @model_validator(mode="after")
    def check_geometry(self) -> "SdfTilingConfig":
        if min(self.encoder_channels + self.decoder_channels) < 1:
            raise ValueError("channel counts must be positive")
        _check_encoder_decoder(self.input_height, self.input_width, 3, self.kernel, self.stride, self.padding)
        if self.n_basis > self.input_height:
            raise ValueError(
                f"n_b={self.n_basis} exceeds input_height={self.input_height} (rank bound of the basis head)"
            )
        return self


class SdfVectorConfig(FrameConfig):
    """
    Single-decoder feedforward model with dense action encoding
    """
    encoder_channels: Tuple[int, int, int] = Field((64, 64, 64))
    hidden_width: int = Field(2048, ge=1, description="Width of the fully connected layers")
    decoder_channels: Tuple[int, int] = Field((64, 64), description="Depth of the first two deconv layers")
    kernel: int = Field(6, ge=1)
    stride: int = Field(2, ge=1)
    padding: int = Field(2, ge=0)

    @property
    def bottleneck_shape(self) -> Tuple[int, int]:
        factor = self.stride ** 3
        return self.input_height // factor, self.input_width // factor

    @property
    def flat_features(self) -> int:
        h, w = self.bottleneck_shape
        return h * w * self.encoder_channels[2]

    @model_validator(mode="after")
    def check_geometry(self) -> "SdfVectorConfig":
        if min(self.encoder_channels + self.decoder_channels) < 1:
            raise ValueError("channel counts must be positive")
        _check_encoder_decoder(self.input_height, self.input_width, 3, self.kernel, self.stride, self.padding)
        return self


class CopyLastFrameConfig(FrameConfig):
    """
    Baseline that repeats the newest history frame
    """


ModelConfig = Union[SdfTilingConfig, SdfVectorConfig, CopyLastFrameConfig]

CONFIG_TYPES: Dict[ModelKind, Type[FrameConfig]] = {
    ModelKind.SDF_TILING: SdfTilingConfig,
    ModelKind.SDF_VECTOR: SdfVectorConfig,
    ModelKind.COPY_LAST_FRAME: CopyLastFrameConfig,
}


def make_config(kind: Union[ModelKind, str], **values: Any) -> ModelConfig:
    """
    Build and validate the config for a model kind.

    Args:
        kind: Model kind.
        **values: Field overrides.

    Returns:
        Validated, immutable config.

    Raises:
        ConfigurationError: A field is unknown or violates an invariant.
    """
    kind = ModelKind(kind)
    try:
        return CONFIG_TYPES[kind](**values)
    except ValidationError as e:
        errors = [
            {"field": ".".join(str(part) for part in err["loc"]) or "config", "message": err["msg"]}
            for err in e.errors()
        ]
        summary = "; ".join(f"{err['field']}: {err['message']}" for err in errors)
        raise ConfigurationError(f"invalid {kind.value} config: {summary}", errors=errors)
