"""Self-attention networks for image recognition.

A small, self-contained stack: a numpy tensor core with reverse-mode
autodiff, local pairwise/patchwise/scalar vector-attention operators plus
a convolution baseline, residual blocks and full network builders,
analytical parameter/MAC accounting, a desk-scale training loop, and
rotation/adversarial robustness probes.
"""

from .tensor import (
    ConfigError,
    DimensionError,
    Tensor,
    UsageError,
    backward,
    no_grad,
)
from .attention import (
    AttentionConfig,
    FootprintSpec,
    PAIRWISE_RELATIONS,
    PATCHWISE_RELATIONS,
    conv2d,
    pairwise_attention,
    patchwise_attention,
    position_features,
    scalar_attention,
)
from .models import ModelSpec, build_model, load_checkpoint, save_checkpoint
from .accounting import CostReport, count_macs, count_params, verify_against_runtime

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig",
    "ConfigError",
    "CostReport",
    "DimensionError",
    "FootprintSpec",
    "ModelSpec",
    "PAIRWISE_RELATIONS",
    "PATCHWISE_RELATIONS",
    "Tensor",
    "UsageError",
    "backward",
    "build_model",
    "conv2d",
    "count_macs",
    "count_params",
    "load_checkpoint",
    "no_grad",
    "pairwise_attention",
    "patchwise_attention",
    "position_features",
    "save_checkpoint",
    "scalar_attention",
    "verify_against_runtime",
]
