from .autograd import GradientSet, Tensor, backward, no_grad
from .layers import (GRU, Conv1d, GroupedLinear, Linear, Module, Parameter, TimeFreqConv,
                     weight_norm_effective)
from .optim import AdamState, AdamW, adamw_step, clip_grad_global_norm

__all__ = [
    "GradientSet", "Tensor", "backward", "no_grad",
    "GRU", "Conv1d", "GroupedLinear", "Linear", "Module", "Parameter", "TimeFreqConv",
    "weight_norm_effective",
    "AdamState", "AdamW", "adamw_step", "clip_grad_global_norm",
]
