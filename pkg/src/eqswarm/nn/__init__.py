"""Minimal reverse-mode autodiff over dense numpy arrays plus the layer zoo
(multi-head self-attention encoder, feedforward blocks, mean-aggregation
graph convolution, pooling) and an in-repo Adam optimizer."""

from .tensor import Tensor, concat, no_grad, parameter
from .layers import (
    AttentionLayerParams,
    EncoderParams,
    LinearParams,
    MlpParams,
    RoleEncoderParams,
    attention_layer_forward,
    encode,
    encode_batch,
    gcn_layer_forward,
    linear,
    masked_mean_pool,
    mlp_forward,
)
from .init import orthogonal
from .optim import Adam, clip_grad_norm, global_grad_norm

__all__ = [
    "Tensor",
    "concat",
    "no_grad",
    "parameter",
    "AttentionLayerParams",
    "EncoderParams",
    "LinearParams",
    "MlpParams",
    "RoleEncoderParams",
    "attention_layer_forward",
    "encode",
    "encode_batch",
    "gcn_layer_forward",
    "linear",
    "masked_mean_pool",
    "mlp_forward",
    "orthogonal",
    "Adam",
    "clip_grad_norm",
    "global_grad_norm",
]
