"""Knowledge extraction and decoupling: experts, shared experts, gates and L_con."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .core import tensor as T
from .core.nn import glorot, init_mlp, linear, mlp_forward
from .core.params import ParamStore
from .core.tensor import Tensor
from .errors import ContractError, DimensionError
from .features import Modality, init_local_activation, sum_pool, target_attention

M_ORDER = ("id", "im", "te")


@dataclass
class MfeOutput:
    expert: dict[str, Tensor]
    share: dict[str, Tensor]
    expert_sh: Tensor
    fused: dict[str, Tensor]


def _key(m) -> str:
    return m.value if isinstance(m, Modality) else str(m)


def init_din(store: ParamStore, d_id: int, att_hidden: int, hidden: int, d_e: int,
             rng: np.random.Generator) -> None:
    init_local_activation(store, "din.att", d_id, att_hidden, rng)
    init_mlp(store, "din.mlp", [d_id, hidden, d_e], rng)


def init_mfe(store: ParamStore, dims: dict[str, int], hidden: int, d_e: int,
             rng: np.random.Generator) -> None:
    """Experts for im/te, shared experts for all three modalities, and gates.

    ``dims`` maps modality -> pooled input dim (id uses the DIN pooled feature).
    """
    for m in ("im", "te"):
        init_mlp(store, f"mfe.expert.{m}", [dims[m], hidden, d_e], rng)
    for m in M_ORDER:
        init_mlp(store, f"mfe.share.{m}", [dims[m], hidden, d_e], rng)
    for m in M_ORDER:
        gate = store.subtree(f"mfe.gate.{m}")
        gate.add("layer0.weight", glorot(rng, d_e, d_e))
        gate.add("layer0.bias", np.zeros(d_e))


def expert_forward(E_a: Tensor, m, params: ParamStore) -> Tensor:
    m = _key(m)
    if m not in ("im", "te"):
        raise ContractError(f"expert_forward handles im/te only, got {m!r}; use id_expert")
    layers = params.subtree(f"mfe.expert.{m}")
    if E_a.shape[-1] != layers["layer0.weight"].shape[0]:
        raise DimensionError(f"{m} expert expects dim {layers['layer0.weight'].shape[0]}, got {E_a.shape[-1]}")
    return mlp_forward(E_a, layers)


def id_expert(seq_id, target_id, params: ParamStore) -> tuple[Tensor, Tensor]:
    """DIN over the ID sequence. Returns (E_expert_id, pooled ID feature E_a_id)."""
    weighted = target_attention(seq_id, target_id, params.subtree("din.att"))
    pooled = sum_pool(weighted)
    return mlp_forward(pooled, params.subtree("din.mlp")), pooled


def shared_forward(E_a: dict, params: ParamStore) -> tuple[dict[str, Tensor], Tensor]:
    share = {m: mlp_forward(E_a[m], params.subtree(f"mfe.share.{m}")) for m in M_ORDER}
    return share, shared_mean(share)


def shared_mean(share: dict) -> Tensor:
    return (share["im"] + share["te"] + share["id"]) * (1.0 / 3.0)


def gate_combine(w, expert, expert_sh) -> Tensor:
    """w * expert + (1 - w) * expert_sh."""
    return w * expert + (1.0 - T.as_tensor(w)) * expert_sh


def gate_fuse(expert: dict, expert_sh: Tensor, params: ParamStore) -> dict[str, Tensor]:
    fused = {}
    for m in expert:
        g = params.subtree(f"mfe.gate.{m}")
        w = T.sigmoid(linear(expert[m], g["layer0.weight"], g["layer0.bias"]))
        fused[m] = gate_combine(w, expert[m], expert_sh)
    return fused


def decoupling_loss(expert: dict, share: dict) -> Tensor:
    """Sum over ordered pairs i != j of cos(expert_i, expert_j) minus the same
    sum over shared features. Returns one value per batch row."""
    keys = [k for k in M_ORDER if k in expert]
    if set(keys) != set(share) or len(keys) != 3:
        raise ContractError("decoupling_loss needs expert and share features for id, im, te")
    total = None
    for i, j in permutations(keys, 2):
        term = T.cosine_sim(expert[i], expert[j]) - T.cosine_sim(share[i], share[j])
        total = term if total is None else total + term
    return total


def mfe_forward(pooled: dict, expert_id: Tensor, params: ParamStore) -> MfeOutput:
    """Full extraction/fusion given pooled im/te/id features and the DIN expert output."""
    expert = {"id": expert_id,
              "im": expert_forward(pooled["im"], "im", params),
              "te": expert_forward(pooled["te"], "te", params)}
    share, expert_sh = shared_forward(pooled, params)
    fused = gate_fuse(expert, expert_sh, params)
    return MfeOutput(expert=expert, share=share, expert_sh=expert_sh, fused=fused)
