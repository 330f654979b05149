"""Gradient-based optimizers over a ParamStore."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ContractError
from .params import ParamStore


class Adam:
    def __init__(self, params: ParamStore, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr < 0:
            raise ConfigError("learning rate must be non-negative")
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self) -> None:
        missing = [k for k, p in self.params.items() if p.grad is None]
        if len(missing) == len(self.m):
            raise ContractError("adam_step called before backward populated any grads")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            # parameters unreachable from this batch's loss keep their moments
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            m_hat = self.m[k] / c1
            v_hat = self.v[k] / c2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    def __init__(self, params: ParamStore, lr: float = 1e-2, momentum: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.buf = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self) -> None:
        if all(p.grad is None for p in self.params.tensors()):
            raise ContractError("sgd step called before backward populated any grads")
        for k, p in self.params.items():
            if p.grad is None:
                continue
            self.buf[k] = self.momentum * self.buf[k] + p.grad
            p.data = p.data - self.lr * self.buf[k]


def adam_step(params: ParamStore, state: Adam | None = None, lr: float = 1e-3,
              betas=(0.9, 0.999), eps: float = 1e-8) -> Adam:
    """Functional wrapper: apply one Adam update, creating state on first use."""
    if state is None:
        state = Adam(params, lr=lr, betas=betas, eps=eps)
    state.step()
    return state


def make_optimizer(name: str, params: ParamStore, lr: float):
    if name == "adam":
        return Adam(params, lr=lr)
    if name == "sgd":
        return SGD(params, lr=lr)
    raise ConfigError(f"unknown optimizer {name!r}")
