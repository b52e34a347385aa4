"""Differentiable computation kernel used by every learned map in the package."""

from . import tensor as F
from .gradcheck import grad_check
from .kernels import conv3d_backward, conv3d_forward, dense_backward, dense_forward
from .params import ParamStore, adam_step
from .tensor import Tensor

__all__ = [
    "F",
    "ParamStore",
    "Tensor",
    "adam_step",
    "conv3d_backward",
    "conv3d_forward",
    "dense_backward",
    "dense_forward",
    "grad_check",
]
