"""Hand/object occlusion prediction and AR frame compositing."""

from .data import AugmentPolicy, DEFAULT_TINT, augment, network_input, preprocess_pair
from .errors import ConfigError, DatasetError
from .losses import LossBreakdown, LossSchedule
from .model import HandSegNet, LogitsPyramid, NetworkConfig, OcclusionNet
from .synth import OBJECT_NAMES, ObjectSpec, generate_dataset, generate_synthetic_sample
from .types import SampleMeta, SampleTuple, derive_overlap

__version__ = "0.1.0"

__all__ = [
    "AugmentPolicy",
    "ConfigError",
    "DatasetError",
    "DEFAULT_TINT",
    "HandSegNet",
    "LogitsPyramid",
    "LossBreakdown",
    "LossSchedule",
    "NetworkConfig",
    "OBJECT_NAMES",
    "ObjectSpec",
    "OcclusionNet",
    "SampleMeta",
    "SampleTuple",
    "augment",
    "derive_overlap",
    "generate_dataset",
    "generate_synthetic_sample",
    "network_input",
    "preprocess_pair",
    "__version__",
]
