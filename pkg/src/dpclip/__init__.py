"""Differentially private SGD with flexible clipping, Gaussian-DP
accounting, and an empirical hypothesis-testing audit harness."""

from .clipping import ClipSpec, MultiplierSpec, clip_full, clip_layerwise
from .engine import TrainConfig, dpsgd_general
from .errors import ConfigurationError, IdxFormatError, PerSampleGradientError
from .estimator import DPSGDClassifier
from .layered import LayeredVector, layer_norms
from .network import Batch, ModelSpec, init_weights, mlp
from .sampling import SplitSpec, split_public

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "ClipSpec",
    "ConfigurationError",
    "DPSGDClassifier",
    "IdxFormatError",
    "LayeredVector",
    "ModelSpec",
    "MultiplierSpec",
    "PerSampleGradientError",
    "SplitSpec",
    "TrainConfig",
    "clip_full",
    "clip_layerwise",
    "dpsgd_general",
    "init_weights",
    "layer_norms",
    "mlp",
    "split_public",
    "__version__",
]
