"""Minimal differentiable-computation substrate (numpy, reverse mode)."""

from .check import finite_diff_check
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gaussian import (
    GaussianParams,
    gaussian_head,
    gaussian_nll,
    kl_diag_gaussians,
    kl_monte_carlo,
    reparam_sample,
    unit_gaussian_nll,
)
from .nn import MLP, Dense, GRUCell, ParamSet
from .optim import adaptive_update, clip_by_global_norm, global_norm
from .tensor import Tensor, forward_backward, no_grad, stop_gradient

__all__ = [
    "CheckpointError",
    "Dense",
    "GRUCell",
    "GaussianParams",
    "MLP",
    "ParamSet",
    "Tensor",
    "adaptive_update",
    "clip_by_global_norm",
    "finite_diff_check",
    "forward_backward",
    "gaussian_head",
    "gaussian_nll",
    "global_norm",
    "kl_diag_gaussians",
    "kl_monte_carlo",
    "load_checkpoint",
    "no_grad",
    "reparam_sample",
    "save_checkpoint",
    "stop_gradient",
    "unit_gaussian_nll",
]
