"""Minimal tensor engine with reverse-mode differentiation."""

from .autograd import DEFAULT_DTYPE, Parameter, Tensor, as_tensor, backward, no_grad
from .layers import (AttentionResidualBlock, Conv, ConvResidualBlock, Dense, Module,
                     MultiHeadAttention)
from .ops import (conv2d, conv3d, cross_entropy, dense, leaky_relu, mse, mse_joint_loss,
                  multi_head_attention, relu, softmax, tanh)
from .optim import Adam, AdamState, adam_step

__all__ = [
    "DEFAULT_DTYPE", "Tensor", "Parameter", "as_tensor", "backward", "no_grad",
    "Module", "Dense", "Conv", "MultiHeadAttention", "AttentionResidualBlock",
    "ConvResidualBlock", "dense", "conv2d", "conv3d", "multi_head_attention", "relu",
    "leaky_relu", "tanh", "softmax", "mse", "mse_joint_loss", "cross_entropy",
    "Adam", "AdamState", "adam_step",
]
