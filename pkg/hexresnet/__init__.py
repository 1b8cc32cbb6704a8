"""
hex-resnet: hexagonal convolutions and Hex-ResNets on CIFAR-10, in numpy.

A size-1 hexagonal convolution over an offset grid (odd columns shifted down)
is computed exactly by three rectangular convolutions whose partial outputs
are interleaved and summed. Hex-ResNets replace the 1x1 projection of the
dimension-changing shortcuts with such a convolution.
"""

from .config import ArchConfig, DataConfig, EngineSettings, ShortcutMode, TrainConfig
from .conv import hexconv_forward_fast, hexconv_forward_reference, hexconv_forward_strided
from .errors import (
    CheckpointFormatError,
    ConfigError,
    DatasetError,
    HexResNetError,
    LayerStateError,
    ShapeMismatchError,
    TrainingDivergedError,
    VerificationError,
)
from .hex_geometry import HexKernelWeights, decomposition_plan, neighborhood
from .resnet import ResNet, build_network, count_parameters
from .trainer import Trainer, evaluate, train

__version__ = "0.1.0"
__all__ = [
    "ArchConfig",
    "DataConfig",
    "EngineSettings",
    "ShortcutMode",
    "TrainConfig",
    "hexconv_forward_fast",
    "hexconv_forward_reference",
    "hexconv_forward_strided",
    "CheckpointFormatError",
    "ConfigError",
    "DatasetError",
    "HexResNetError",
    "LayerStateError",
    "ShapeMismatchError",
    "TrainingDivergedError",
    "VerificationError",
    "HexKernelWeights",
    "decomposition_plan",
    "neighborhood",
    "ResNet",
    "build_network",
    "count_parameters",
    "Trainer",
    "evaluate",
    "train",
]
