"""Minimal reverse-mode differentiation over numpy arrays."""
from . import functional
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .functional import (conv1d, conv_transpose1d, depthwise_conv1d, global_layer_norm, prelu,
                         relu, sigmoid)
from .tensor import (Graph, NonFiniteError, ParamSet, Tensor, as_tensor, backward,
                     is_grad_enabled, no_grad)

__all__ = [
    "functional", "Tensor", "Graph", "ParamSet", "backward", "no_grad", "is_grad_enabled",
    "as_tensor", "NonFiniteError", "conv1d", "conv_transpose1d", "depthwise_conv1d",
    "global_layer_norm", "prelu", "relu", "sigmoid", "save_checkpoint", "load_checkpoint",
    "CheckpointError",
]
