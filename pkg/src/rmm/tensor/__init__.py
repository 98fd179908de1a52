"""Minimal dense tensor engine with reverse-mode differentiation."""
from .core import Graph, Tensor, as_tensor, backward, grad_enabled, no_grad
from .io import read_tensor, tensor_from_bytes, tensor_to_bytes, write_tensor
from .nn import Conv2d, Linear, Module, fan_in_uniform
from .ops import (
    avg_pool,
    bilinear_matrix,
    broadcast_spatial,
    broadcast_to,
    clamp,
    concat,
    conv2d,
    fully_connected,
    l2_norm,
    leaky_relu,
    matmul,
    normalize,
    resize_bilinear,
    resize_nearest,
    sigmoid,
    softmax,
    split,
    tanh,
)

__all__ = [
    "Graph", "Tensor", "as_tensor", "backward", "grad_enabled", "no_grad",
    "read_tensor", "write_tensor", "tensor_to_bytes", "tensor_from_bytes",
    "Conv2d", "Linear", "Module", "fan_in_uniform",
    "avg_pool", "bilinear_matrix", "broadcast_spatial", "broadcast_to", "clamp", "concat",
    "conv2d", "fully_connected", "l2_norm", "leaky_relu", "matmul", "normalize",
    "resize_bilinear", "resize_nearest", "sigmoid", "softmax", "split", "tanh",
]
