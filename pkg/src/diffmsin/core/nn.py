"""Layer-level building blocks: perceptrons and attention."""
from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigError, DimensionError, EmptySequenceError
from . import tensor as T
from .params import ParamStore
from .tensor import Tensor

ACTIVATIONS = {
    "relu": T.relu,
    "sigmoid": T.sigmoid,
    "none": lambda x: x,
}


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_mlp(store: ParamStore, prefix: str, sizes: list[int], rng: np.random.Generator) -> ParamStore:
    """Create ``prefix.layer{i}.weight`` (in x out) and ``.bias`` for each consecutive pair."""
    sub = store.subtree(prefix)
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        sub.add(f"layer{i}.weight", glorot(rng, n_in, n_out))
        sub.add(f"layer{i}.bias", np.zeros(n_out))
    return sub


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input dim {x.shape[-1]} != weight rows {weight.shape[0]}")
    lead = x.shape[:-1]
    flat = x if x.ndim == 2 else T.reshape(x, (-1, x.shape[-1])) if x.ndim > 2 else T.reshape(x, (1, -1))
    y = T.matmul(flat, weight)
    if bias is not None:
        y = y + bias
    return T.reshape(y, lead + (weight.shape[1],)) if x.ndim != 2 else y


def mlp_forward(x: Tensor, layers: ParamStore, activation: str = "none",
                hidden_activation: str = "relu") -> Tensor:
    """Affine layers ``layer0..layerK``; hidden layers use ``hidden_activation``,
    the last one ``activation``."""
    if activation not in ACTIVATIONS or hidden_activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}/{hidden_activation!r}")
    n_layers = 0
    while f"layer{n_layers}.weight" in layers:
        n_layers += 1
    if n_layers == 0:
        raise DimensionError("mlp has no layers")
    h = x
    for i in range(n_layers):
        h = linear(h, layers[f"layer{i}.weight"], layers[f"layer{i}.bias"])
        act = activation if i == n_layers - 1 else hidden_activation
        h = ACTIVATIONS[act](h)
    return h


def scaled_dot_attention(q: Tensor, K: Tensor, V: Tensor, return_weights: bool = False):
    """softmax(q K^T / sqrt(d)) V for q (..., d), K (..., n, d), V (..., n, dv)."""
    q, K, V = T.as_tensor(q), T.as_tensor(K), T.as_tensor(V)
    if K.shape[-2] == 0:
        raise EmptySequenceError("attention over an empty key sequence")
    d = q.shape[-1]
    if K.shape[-1] != d:
        raise DimensionError(f"query dim {d} != key dim {K.shape[-1]}")
    if V.shape[-2] != K.shape[-2]:
        raise DimensionError("keys and values differ in length")
    if K.shape[-2] == 1:
        # softmax over a single key is exactly 1 and has zero derivative,
        # so the output is the value itself, bit for bit
        lead = np.broadcast_shapes(q.shape[:-1], K.shape[:-2], V.shape[:-2])
        out = T.reshape(V, V.shape[:-2] + (V.shape[-1],))
        if out.shape[:-1] != lead:
            out = out + np.zeros(lead + (V.shape[-1],))
        return (out, T.Tensor(np.ones(lead + (1,)))) if return_weights else out
    # one query per batch row: broadcast-multiply and reduce instead of
    # stacks of (1 x d) @ (d x n) products, which numpy runs slowly
    qe = T.reshape(q, q.shape[:-1] + (1, d))
    scores = T.tsum(qe * K, axis=-1) * (1.0 / math.sqrt(d))
    w = T.softmax(scores, axis=-1)
    out = T.tsum(T.reshape(w, w.shape + (1,)) * V, axis=-2)
    return (out, w) if return_weights else out


def init_mha(store: ParamStore, prefix: str, dim: int, heads: int, rng: np.random.Generator) -> ParamStore:
    if dim % heads:
        raise ConfigError(f"model dim {dim} not divisible by {heads} heads")
    sub = store.subtree(prefix)
    for name in ("wq", "wk", "wv", "wo"):
        sub.add(name, glorot(rng, dim, dim))
    return sub


def multi_head_attention(q: Tensor, kv: Tensor, heads: int, params: ParamStore,
                         return_weights: bool = False):
    """Query q (B, d) attends over kv (B, n, d) with ``heads`` heads.

    Projections ``wq, wk, wv, wo`` are bias-free d x d matrices.
    """
    B, d = q.shape
    n = kv.shape[-2]
    if d % heads:
        raise ConfigError(f"model dim {d} not divisible by {heads} heads")
    if n == 0:
        raise EmptySequenceError("attention over an empty key sequence")
    dh = d // heads
    Q = T.reshape(linear(q, params["wq"]), (B, heads, dh))
    K = T.transpose(T.reshape(linear(kv, params["wk"]), (B, n, heads, dh)), (0, 2, 1, 3))
    V = T.transpose(T.reshape(linear(kv, params["wv"]), (B, n, heads, dh)), (0, 2, 1, 3))
    out, w = scaled_dot_attention(Q, K, V, return_weights=True)  # (B, h, dh), (B, h, n)
    out = linear(T.reshape(out, (B, d)), params["wo"])
    if return_weights:
        return out, w
    return out
