from . import ops
from .gradcheck import GradCheckReport, finite_diff_check
from .nn import Conv2d, LayerNorm, Linear, Module, Parameter
from .ops import forward_op
from .optim import AdamW, AdamWState
from .tensor import ShapeError, Tensor, as_tensor, no_grad

__all__ = [
    "AdamW", "AdamWState", "Conv2d", "GradCheckReport", "LayerNorm", "Linear", "Module",
    "Parameter", "ShapeError", "Tensor", "as_tensor", "finite_diff_check", "forward_op",
    "no_grad", "ops",
]
