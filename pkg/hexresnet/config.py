"""
Configuration for the hex-resnet engine.

Runtime settings come from environment variables (optionally through a .env
file) and can be overridden with keyword arguments. Architecture and training
hyperparameters are validated pydantic models so they can be echoed and
stored verbatim in checkpoints.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Tuple, Type, TypeVar

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from .errors import ConfigError

# Auto-load .env file if python-dotenv is available
try:
    from dotenv import load_dotenv

    env_path = os.path.join(os.path.dirname(os.path.dirname(__file__)), ".env")
    if os.path.exists(env_path):
        load_dotenv(env_path)
    else:
        load_dotenv()
except ImportError:
    pass


# Per-channel statistics of the 45k CIFAR-10 training split on the 0-1 scale.
CIFAR10_MEANS: Tuple[float, float, float] = (0.4914, 0.4822, 0.4465)
CIFAR10_STDS: Tuple[float, float, float] = (0.2470, 0.2435, 0.2616)

STAGE_WIDTHS: Tuple[int, int, int] = (16, 32, 64)


def _bool_env(name: str, default: str = "false") -> bool:
    return os.getenv(name, default).lower() in {"1", "true", "yes", "enabled", "on"}


class ShortcutMode(str, Enum):
    """Shortcut used by the two dimension-changing residual blocks."""

    IDENTITY_PAD = "identity_pad"
    PROJECTION_1X1 = "projection_1x1"
    HEX_PROJECTION = "hex_projection"


class ArchConfig(BaseModel):
    """Fully determines a network and its parameter count."""

    model_config = ConfigDict(frozen=True)

    depth: int = 20
    shortcut_mode: ShortcutMode = ShortcutMode.HEX_PROJECTION
    num_classes: int = 10
    image_size: int = 32

    @field_validator("depth")
    @classmethod
    def _depth_is_6n_plus_2(cls, v: int) -> int:
        if v < 8 or (v - 2) % 6 != 0:
            raise ValueError(f"depth must be 6n+2 with n >= 1 (e.g. 20, 32, 44, 56), got {v}")
        return v

    @field_validator("num_classes", "image_size")
    @classmethod
    def _positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be positive")
        return v

    @property
    def blocks_per_stage(self) -> int:
        return (self.depth - 2) // 6

    @property
    def widths(self) -> Tuple[int, int, int]:
        return STAGE_WIDTHS


class TrainConfig(BaseModel):
    """Optimizer and schedule hyperparameters of the CIFAR-10 protocol."""

    model_config = ConfigDict(frozen=True)

    epochs: int = 182
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.001
    lr_drops: Tuple[int, ...] = (32_000, 48_000, 64_000)
    lr_drop_factor: float = 0.1
    seed: int = 0
    decay_batchnorm: bool = True
    train_subset: Optional[int] = None
    validation_size: int = 5_000
    log_interval: int = 50

    @field_validator("epochs")
    @classmethod
    def _non_negative(cls, v: int) -> int:
        if v < 0:
            raise ValueError("must be non-negative")
        return v

    @field_validator("batch_size", "log_interval", "validation_size")
    @classmethod
    def _at_least_one(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @field_validator("lr")
    @classmethod
    def _positive_lr(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("learning rate must be positive")
        return v

    @field_validator("momentum")
    @classmethod
    def _momentum_range(cls, v: float) -> float:
        if not 0.0 <= v < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        return v

    @field_validator("weight_decay")
    @classmethod
    def _decay_range(cls, v: float) -> float:
        if v < 0:
            raise ValueError("weight decay must be non-negative")
        return v

    @field_validator("lr_drops")
    @classmethod
    def _strictly_increasing(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(d <= 0 for d in v) or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError(f"lr drop iterations must be positive and strictly increasing, got {v}")
        return v

    @field_validator("lr_drop_factor")
    @classmethod
    def _factor_range(cls, v: float) -> float:
        if not 0.0 < v <= 1.0:
            raise ValueError("lr drop factor must be in (0, 1]")
        return v

    @field_validator("seed")
    @classmethod
    def _seed_range(cls, v: int) -> int:
        if not 0 <= v < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        return v

    @field_validator("train_subset")
    @classmethod
    def _subset_positive(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 1:
            raise ValueError("train subset must be at least 1 image")
        return v


class EngineSettings(BaseModel):
    """
    Process-level settings.

    Values are read from the environment first and then overridden by
    explicit keyword arguments:

    - HEXRESNET_DATA_DIR, HEXRESNET_OUTPUT_DIR
    - HEXRESNET_NUM_WORKERS, HEXRESNET_PRECISION
    - LOG_LEVEL, LOG_FILE
    """

    def __init__(self, **kwargs: Any) -> None:
        env_values: dict = {}

        env_values["data_dir"] = os.getenv("HEXRESNET_DATA_DIR", "./data/cifar-10-batches-bin")
        env_values["output_dir"] = os.getenv("HEXRESNET_OUTPUT_DIR", "./runs")
        env_values["num_workers"] = int(os.getenv("HEXRESNET_NUM_WORKERS", "2"))
        env_values["precision"] = os.getenv("HEXRESNET_PRECISION", "float32")

        env_values["log_level"] = os.getenv("LOG_LEVEL", "INFO")
        env_values["log_file"] = os.getenv("LOG_FILE")

        # Override with explicit kwargs
        env_values.update({k: v for k, v in kwargs.items() if v is not None})

        super().__init__(**env_values)

    data_dir: str = "./data/cifar-10-batches-bin"
    output_dir: str = "./runs"
    num_workers: int = 2
    precision: str = "float32"

    log_level: str = "INFO"
    log_file: Optional[str] = None

    @field_validator("precision")
    @classmethod
    def _known_precision(cls, v: str) -> str:
        if v not in {"float32", "float64"}:
            raise ValueError(f"precision must be float32 or float64, got {v!r}")
        return v

    @field_validator("num_workers")
    @classmethod
    def _workers(cls, v: int) -> int:
        if v < 0:
            raise ValueError("num_workers must be non-negative")
        return v


@dataclass(frozen=True)
class DataConfig:
    """Data pipeline settings."""

    data_dir: Path
    channel_means: Optional[Tuple[float, float, float]]
    channel_stds: Optional[Tuple[float, float, float]]
    prefetch: bool = True

    @classmethod
    def from_env(cls, data_dir: Optional[str] = None) -> "DataConfig":
        """Read configuration from environment variables.

        HEXRESNET_RECOMPUTE_STATS=true drops the frozen CIFAR-10 statistics so
        they are recomputed from the training split.
        """
        recompute = _bool_env("HEXRESNET_RECOMPUTE_STATS", "false")
        return cls(
            data_dir=Path(data_dir or os.getenv("HEXRESNET_DATA_DIR", "./data/cifar-10-batches-bin")),
            channel_means=None if recompute else CIFAR10_MEANS,
            channel_stds=None if recompute else CIFAR10_STDS,
            prefetch=_bool_env("HEXRESNET_PREFETCH", "true"),
        )


ModelT = TypeVar("ModelT", bound=BaseModel)


def build_config(cls: Type[ModelT], **kwargs: Any) -> ModelT:
    """Instantiate a config model, turning pydantic validation errors into ConfigError."""
    try:
        return cls(**{k: v for k, v in kwargs.items() if v is not None})
    except ValidationError as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc
