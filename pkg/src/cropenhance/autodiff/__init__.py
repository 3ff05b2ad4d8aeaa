from .tensor import GraphError, ShapeError, Tape, Tensor, active_tape, backward, record
from . import init, ops

__all__ = [
    "GraphError",
    "ShapeError",
    "Tape",
    "Tensor",
    "active_tape",
    "backward",
    "record",
    "init",
    "ops",
]
