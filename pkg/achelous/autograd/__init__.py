"""Tensor engine with reverse-mode differentiation and the operator set used by the models."""
from achelous.autograd.tensor import Tensor, no_grad, precision, tensor, zeros, ones
from achelous.autograd.nn import Module, Parameter, manual_seed

__all__ = ["Tensor", "Module", "Parameter", "manual_seed", "no_grad", "precision", "tensor", "zeros", "ones"]
