"""Exception hierarchy for the hex-resnet engine."""

from __future__ import annotations

from typing import Optional


class HexResNetError(Exception):
    """Base class for every error raised by the engine."""


class ShapeMismatchError(HexResNetError, ValueError):
    """Tensor shapes or channel counts violate an operation's precondition."""


class ConfigError(HexResNetError, ValueError):
    """Architecture, training or command-line configuration is invalid."""


class DatasetError(HexResNetError, OSError):
    """CIFAR-10 batch files are missing or malformed."""


class CheckpointFormatError(HexResNetError):
    """A checkpoint container cannot be decoded."""


class LayerStateError(HexResNetError, RuntimeError):
    """A layer was asked for a backward pass it has no cached forward for."""


class TrainingDivergedError(HexResNetError, ArithmeticError):
    """The training loss became NaN or infinite."""

    def __init__(self, iteration: int, loss: float, message: Optional[str] = None) -> None:
        self.iteration = iteration
        self.loss = loss
        super().__init__(message or f"non-finite loss {loss!r} at iteration {iteration}")


class VerificationError(HexResNetError):
    """A numerical self-check (oracle sweep or gradient check) failed."""
