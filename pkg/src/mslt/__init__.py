"""Multi-scale linear transformation networks for photo exposure correction.

Pure-numpy CPU implementation: Laplacian-pyramid decomposition, bilateral-
grid affine correction of the low-frequency band, mask-based correction of
the high-frequency bands, plus training (hand-written backward pass, Adam,
cosine warm restarts), quality metrics and a benchmark CLI.
"""

from .errors import (
    ContractViolation,
    DimensionError,
    MsltError,
    SizeError,
    WeightFormatError,
)
from .model import (
    ModelConfig,
    ModelParams,
    VARIANTS,
    backward,
    flop_count,
    forward,
    init_params,
    load_weights,
    param_count,
    save_weights,
)
from .training import AdamState, SamplePair, TrainConfig, adam_step, cosine_lr, fit, mse_loss

__version__ = "0.1.0"

__all__ = [
    "ContractViolation",
    "DimensionError",
    "MsltError",
    "SizeError",
    "WeightFormatError",
    "ModelConfig",
    "ModelParams",
    "VARIANTS",
    "backward",
    "flop_count",
    "forward",
    "init_params",
    "load_weights",
    "param_count",
    "save_weights",
    "AdamState",
    "SamplePair",
    "TrainConfig",
    "adam_step",
    "cosine_lr",
    "fit",
    "mse_loss",
    "__version__",
]
