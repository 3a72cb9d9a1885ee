"""Dense float64 tensors, autodiff, and angle utilities."""

from .engine import Tensor, concat, no_grad, scatter_rows, softmax, stack_last
from .functional import atan2_phase, layer_norm, softmax_vec, wrap_pi
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    "Tensor",
    "concat",
    "no_grad",
    "scatter_rows",
    "softmax",
    "stack_last",
    "atan2_phase",
    "layer_norm",
    "softmax_vec",
    "wrap_pi",
    "GradCheckReport",
    "grad_check",
]
