from .tensor import Tensor, as_tensor, no_grad, enable_grad, grad_enabled
from .params import ParameterStore
from .gradcheck import grad_check, relative_error
from . import ops
from .ops import conv2d, linear, layer_norm, softmax_rows, spike, surrogate_grad

__all__ = [
    "Tensor", "as_tensor", "no_grad", "enable_grad", "grad_enabled", "ParameterStore",
    "grad_check", "relative_error", "ops", "conv2d", "linear", "layer_norm",
    "softmax_rows", "spike", "surrogate_grad",
]
