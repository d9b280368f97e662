"""Tape-based reverse-mode differentiation, parameters and Adam."""

from . import tensor as ops
from .checkpoint import load_checkpoint, save_checkpoint
from .linalg import cho_solve, cholesky, logdet_from_chol, solve_triangular
from .nn import conv
from .optim import AdamState, adam_step, linear_lr
from .params import Param, ParamStore, value_and_grad
from .tensor import Tensor, as_tensor, data_of, no_grad, recording, track_shapes

__all__ = [
    "AdamState", "Param", "ParamStore", "Tensor", "adam_step", "as_tensor",
    "cho_solve", "cholesky", "conv", "data_of", "linear_lr", "load_checkpoint",
    "logdet_from_chol", "no_grad", "ops", "recording", "save_checkpoint",
    "solve_triangular", "track_shapes", "value_and_grad",
]
