"""Tensor engine: dense float64 arrays, reverse-mode autodiff, optimizers."""
from .nn import init_mha, init_mlp, linear, mlp_forward, multi_head_attention, scaled_dot_attention
from .optim import SGD, Adam, adam_step, make_optimizer
from .params import ParamStore, load_checkpoint, save_checkpoint
from .tensor import Tape, Tensor, backward, cosine_sim, matmul, softmax

__all__ = [
    "Tensor", "Tape", "backward", "matmul", "softmax", "cosine_sim",
    "ParamStore", "save_checkpoint", "load_checkpoint",
    "Adam", "SGD", "adam_step", "make_optimizer",
    "linear", "mlp_forward", "init_mlp", "init_mha", "scaled_dot_attention", "multi_head_attention",
]
