"""Skeleton-based isolated sign recognition with a hierarchical windowed
graph attention network: preprocessing, windowed masked attention with
manual gradients, training, and verification oracles."""

from ._kernels import backend_name
from .errors import ConfigError, DataError, HwgatError, IoError, NumericError
from .model import HWGAT, ModelConfig
from .preprocess import AugmentConfig
from .sequence import SkeletonSequence
from .skeleton import SkeletonSchema, build_default_schema
from .training import TrainConfig, evaluate, finetune, train_loop
from .windows import build_window_layout

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "ConfigError",
    "DataError",
    "HWGAT",
    "HwgatError",
    "IoError",
    "ModelConfig",
    "NumericError",
    "SkeletonSchema",
    "SkeletonSequence",
    "TrainConfig",
    "backend_name",
    "build_default_schema",
    "build_window_layout",
    "evaluate",
    "finetune",
    "train_loop",
    "__version__",
]
