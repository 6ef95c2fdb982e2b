"""Dense tensors with reverse-mode autodiff, sized for desk-scale models."""
from . import ops
from .autograd import Graph, Tensor, backward, current_graph
from .kernels import BACKEND

__all__ = ["BACKEND", "Graph", "Tensor", "backward", "current_graph", "ops"]
