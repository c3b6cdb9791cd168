"""Numerical core: tensors with autodiff, parameter modules, errors, seeding."""

from protoehr.core.errors import ProtoEHRError
from protoehr.core.module import Module, Parameter
from protoehr.core.tensors import Tensor, backward, no_grad

__all__ = ["Module", "Parameter", "ProtoEHRError", "Tensor", "backward", "no_grad"]
