from .tensor import ParamTensor
from . import layers
from .gradcheck import grad_check, GradCheckError, layer_suite

__all__ = ["ParamTensor", "layers", "grad_check", "GradCheckError", "layer_suite"]
