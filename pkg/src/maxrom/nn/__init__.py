"""Minimal neural-network toolkit: kernels, autodiff tape and optimisers."""

from .autodiff import Tensor, conv2d, conv_transpose2d, dense, elu, mse, parameter, reshape
from .optim import AdamState, adam_step, random_streams, xavier_uniform

__all__ = [
    "AdamState",
    "Tensor",
    "adam_step",
    "conv2d",
    "conv_transpose2d",
    "dense",
    "elu",
    "mse",
    "parameter",
    "random_streams",
    "reshape",
    "xavier_uniform",
]
