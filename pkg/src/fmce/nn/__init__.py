"""Small numpy layer engine: forward/backward for a fixed layer vocabulary."""
from .layers import (
    GAP,
    MAXPOOL,
    RELU,
    SOFTMAX,
    LayerKind,
    LayerSpec,
    conv3x3,
    fully_connected,
)
from .loss import softmax_cross_entropy
from .model import ForwardCache, ModelGraph
from .optim import OptimizerConfig, OptimizerState, make_optimizer, step

__all__ = [
    "GAP",
    "MAXPOOL",
    "RELU",
    "SOFTMAX",
    "ForwardCache",
    "LayerKind",
    "LayerSpec",
    "ModelGraph",
    "OptimizerConfig",
    "OptimizerState",
    "conv3x3",
    "fully_connected",
    "make_optimizer",
    "softmax_cross_entropy",
    "step",
]
