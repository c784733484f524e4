"""Minimal numpy autodiff: tensors, ops, optimizers, gradient checks, parameter IO."""

from . import functional
from .autograd import Tensor, no_grad, is_grad_enabled
from .gradcheck import finite_difference_check, relative_error
from .optim import OptimizerConfig, ParamStore, glorot_uniform, optimizer_step, param_rng
from .serialize import dump_params, load_params

__all__ = [
    "Tensor",
    "no_grad",
    "is_grad_enabled",
    "functional",
    "finite_difference_check",
    "relative_error",
    "OptimizerConfig",
    "ParamStore",
    "glorot_uniform",
    "optimizer_step",
    "param_rng",
    "dump_params",
    "load_params",
]
