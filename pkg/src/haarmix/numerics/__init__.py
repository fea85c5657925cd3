"""Numerical substrate: tensors, reverse-mode differentiation, tensor files."""

from . import ops
from .gradcheck import gradcheck
from .tensor import (
    GradTape,
    GradTapeError,
    NonFiniteError,
    ShapeMismatchError,
    Tensor,
    active_tape,
    backward,
    force_float64,
    set_debug_checks,
)
from .tensorfile import TensorFileError, read_pgm, read_tensor, write_tensor

__all__ = [
    "GradTape",
    "GradTapeError",
    "NonFiniteError",
    "ShapeMismatchError",
    "Tensor",
    "TensorFileError",
    "active_tape",
    "backward",
    "force_float64",
    "gradcheck",
    "ops",
    "read_pgm",
    "read_tensor",
    "set_debug_checks",
    "write_tensor",
]
