"""
Custom exceptions for tiling-predictor
"""

from typing import Any, Dict, List, Optional


class PredictorError(Exception):
    """Base exception class; ``exit_code`` is what the CLI exits with"""
    exit_code: int = 2

    def __init__(
        self,
        detail: str = "Prediction error",
        errors: Optional[List[Dict[str, Any]]] = None,
    ):
        self.detail = detail
        self.errors = errors
        super().__init__(detail)


class ShapeError(PredictorError):
    """Tensor shapes or channel counts do not fit together"""
    def __init__(
        self,
        detail: str = "Shape mismatch",
        errors: Optional[List[Dict[str, Any]]] = None,
    ):
        super().__init__(detail=detail, errors=errors)


class ConfigurationError(PredictorError):
    """A configuration value violates an invariant"""
    def __init__(
        self,
        detail: str = "Invalid configuration",
        errors: Optional[List[Dict[str, Any]]] = None,
    ):
        super().__init__(detail=detail, errors=errors)


class LogFormatError(PredictorError):
    """Driving log file is malformed"""
    def __init__(self, detail: str = "Malformed driving log"):
        super().__init__(detail=detail)


class CheckpointError(PredictorError):
    """Checkpoint file is malformed or does not match the model"""
    def __init__(self, detail: str = "Malformed checkpoint"):
        super().__init__(detail=detail)


class EmptyDatasetError(PredictorError):
    """No samples to work with"""
    def __init__(self, detail: str = "Dataset is empty"):
        super().__init__(detail=detail)


class GradientError(PredictorError):
    """Reverse-mode differentiation was asked for something it cannot do"""
    def __init__(self, detail: str = "Cannot differentiate"):
        super().__init__(detail=detail)


class DivergenceError(PredictorError):
    """Training produced a non-finite loss or gradient"""
    exit_code = 3

    def __init__(
        self,
        detail: str = "Training diverged",
        epoch: Optional[int] = None,
        batch: Optional[int] = None,
    ):
        self.epoch = epoch
        self.batch = batch
        if epoch is not None:
            detail = f"{detail} (epoch={epoch} batch={batch})"
        super().__init__(detail=detail)
