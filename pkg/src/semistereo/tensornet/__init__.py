"""Minimal deterministic differentiable-network kernel.

Supports exactly what the two patch classifiers need: batched 5-D tensors
(batch, channels, depth, height, width), valid 2-D/3-D convolutions with
per-axis stride, spatial max pooling, fully connected layers, ReLU,
two-class softmax cross-entropy, seeded mini-batch SGD with a linear
learning-rate schedule, finite-difference gradient checking, and versioned
weight serialization.
"""

from .network import LayerSpec, NetworkParams, init_params, forward, backward, predict_scores, trace_shapes
from .ops import (
    conv_forward,
    conv_backward,
    maxpool_forward,
    maxpool_backward,
    fc_forward,
    fc_backward,
    relu_forward,
    relu_backward,
    softmax_xent,
)
from .train import TrainConfig, sgd_train
from .gradcheck import grad_check
from .serialize import save_params, load_params

__all__ = [
    "LayerSpec",
    "NetworkParams",
    "TrainConfig",
    "init_params",
    "forward",
    "backward",
    "predict_scores",
    "trace_shapes",
    "conv_forward",
    "conv_backward",
    "maxpool_forward",
    "maxpool_backward",
    "fc_forward",
    "fc_backward",
    "relu_forward",
    "relu_backward",
    "softmax_xent",
    "sgd_train",
    "grad_check",
    "save_params",
    "load_params",
]
