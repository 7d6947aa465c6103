"""Tensor type, differentiable ops, gradient checking and SGD."""
from .gradcheck import grad_check
from .nn import BatchNorm, Conv2d, Conv3d, Dropout, Linear, Module
from .ops import (
    add,
    batchnorm,
    concat,
    conv2d,
    conv3d,
    dropout,
    global_avgpool3d,
    hadamard,
    linear,
    maximum,
    maxpool2d,
    maxpool3d,
    mean,
    mul,
    relu,
    reshape,
    softmax,
    softmax_cross_entropy,
    spatial_expectation,
    take,
    transpose,
)
from .optim import SGD, clip_grad_norm, sgd_step
from .tensor import (
    DimensionError,
    GraphStateError,
    Parameter,
    Tensor,
    as_tensor,
    backward,
    is_grad_enabled,
    no_grad,
)

__all__ = [
    "BatchNorm", "Conv2d", "Conv3d", "DimensionError", "Dropout", "GraphStateError", "Linear",
    "Module", "Parameter", "SGD", "Tensor", "add", "as_tensor", "backward", "batchnorm", "clip_grad_norm", "concat",
    "conv2d", "conv3d", "dropout", "global_avgpool3d", "grad_check", "hadamard",
    "is_grad_enabled", "linear", "maximum", "maxpool2d", "maxpool3d", "mean", "mul", "no_grad",
    "relu", "reshape", "sgd_step", "softmax", "softmax_cross_entropy", "spatial_expectation",
    "take", "transpose",
]
