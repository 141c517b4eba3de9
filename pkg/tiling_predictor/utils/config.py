"""
Settings and configuration for tiling-predictor
"""

from typing import Optional

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Process-wide runtime settings, read from the environment or ``.env``
    """
    model_config = SettingsConfigDict(
        env_prefix="TILING_PREDICTOR_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[str] = None
    STRUCTURED_LOGGING: bool = False

    # Evaluation
    EVAL_WORKERS: int = 1

    # Console
    PROGRESS_BARS: bool = True

    @field_validator("LOG_LEVEL")
    @classmethod
    def check_log_level(cls, v: str) -> str:
        level = v.upper()
        if level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"unknown log level {v!r}")
        return level

    @field_validator("EVAL_WORKERS")
    @classmethod
    def check_workers(cls, v: int) -> int:
        if v < 1:
            raise ValueError("EVAL_WORKERS must be >= 1")
        return v


settings = Settings()
