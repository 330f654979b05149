"""Feature dynamic adaptive fusion: target-driven modality gates, a rank-one
cross layer, attention fusion onto the ID feature, and the prediction head."""
from __future__ import annotations

import numpy as np

from .core import tensor as T
from .core.nn import glorot, init_mha, init_mlp, linear, mlp_forward, multi_head_attention
from .core.params import ParamStore
from .core.tensor import Tensor
from .errors import ConfigError, DimensionError


def init_fdaf(store: ParamStore, d_id: int, d_e: int, n_blocks: int, heads: int,
              rng: np.random.Generator) -> None:
    D = n_blocks * d_e
    gate = store.subtree("fdaf.gate")
    gate.add("layer0.weight", glorot(rng, d_id, D))
    gate.add("layer0.bias", np.zeros(D))
    cross = store.subtree("fdaf.cross")
    # small w_c keeps the quadratic term from dominating at initialization
    cross.add("w_c", rng.normal(0.0, 0.1 / np.sqrt(D), size=D))
    cross.add("b_c", np.zeros(D))
    init_mha(store, "fdaf.mha", d_e, heads, rng)


def modality_gate(target_id_embed: Tensor, blocks: list, params: ParamStore) -> Tensor:
    """Gate each auxiliary block by its slice of sigmoid(linear(target id embed))
    and concatenate; blocks are (E_im, E_te, E_sh[, E_syn])."""
    g = params.subtree("fdaf.gate")
    w = T.sigmoid(linear(target_id_embed, g["layer0.weight"], g["layer0.bias"]))
    weights = T.split(w, len(blocks), axis=-1)
    if weights[0].shape[-1] != blocks[0].shape[-1]:
        raise DimensionError("gate width does not match block dims")
    return gated_concat(weights, blocks)


def gated_concat(weights: list, blocks: list) -> Tensor:
    return T.concat([w * b for w, b in zip(weights, blocks)], axis=-1)


def cross_net(E: Tensor, w_c, b_c) -> Tensor:
    """E E^T w_c + b_c + E, evaluated through the rank-one identity
    E E^T w_c = (E . w_c) E."""
    E = T.as_tensor(E)
    if E.shape[-1] != T.as_tensor(w_c).shape[-1]:
        raise DimensionError(f"cross_net: input dim {E.shape[-1]} != w_c dim {T.as_tensor(w_c).shape[-1]}")
    s = T.reshape(T.dot(E, w_c), E.shape[:-1] + (1,))
    return E * s + b_c + E


def noninvasive_fuse(E_id: Tensor, E_c: Tensor, params: ParamStore, heads: int,
                     return_weights: bool = False):
    """Multi-head attention with E_id as query over E_c split into d_e-sized
    tokens, plus a residual add of E_id."""
    d_e = E_id.shape[-1]
    D = E_c.shape[-1]
    if D % d_e:
        raise ConfigError(f"auxiliary dim {D} is not a multiple of d_e={d_e}")
    tokens = T.reshape(E_c, (E_c.shape[0], D // d_e, d_e))
    att, w = multi_head_attention(E_id, tokens, heads, params.subtree("fdaf.mha"), return_weights=True)
    out = att + E_id
    return (out, w) if return_weights else out


def init_head(store: ParamStore, d_in: int, hidden: int, rng: np.random.Generator) -> None:
    init_mlp(store, "head", [d_in, hidden, 1], rng)


def predict_head(parts: list, params: ParamStore) -> Tensor:
    """2-layer perceptron + sigmoid over the concatenated inputs; returns (B,)."""
    x = T.concat(parts, axis=-1)
    y = mlp_forward(x, params.subtree("head"), activation="sigmoid")
    return T.reshape(y, y.shape[:-1])
