"""Model assembly on a DIN backbone, with ablation switches."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .core import tensor as T
from .core.nn import glorot, init_mlp, linear
from .core.params import ParamStore
from .core.tensor import Tensor
from .features import init_local_activation, sum_pool, target_attention
from .fusion import cross_net, init_fdaf, init_head, modality_gate, noninvasive_fuse, predict_head
from .mfe import decoupling_loss, id_expert, init_din, init_mfe, mfe_forward
from .synergy import (build_schedule, draw_noise, init_fusion_weights, init_synergy_head,
                      run_mssfi, synergy_fuse, synergy_loss)


@dataclass
class Batch:
    profile: np.ndarray      # (B, F) int
    id_seq: np.ndarray       # (B, n) int
    target: np.ndarray       # (B,) int
    im_seq: np.ndarray       # (B, n, d_im)
    te_seq: np.ndarray       # (B, n, d_te)
    target_im: np.ndarray    # (B, d_im)
    target_te: np.ndarray    # (B, d_te)
    y: np.ndarray            # (B,)
    keys: np.ndarray         # (B,) stable sample ids

    def __len__(self):
        return len(self.y)


@dataclass
class ForwardResult:
    y_out: Tensor
    l_con: Tensor | None = None
    l_syn: Tensor | None = None
    parts: dict = field(default_factory=dict)


def _item_table(n_items: int, d_id: int, rng) -> np.ndarray:
    return rng.normal(0.0, 0.1, size=(n_items, d_id))


class DiffMSIN:
    """Multi-modal CTR model. ``cfg.no_mfe / no_src / no_fdaf`` remove the
    corresponding modules; with all three removed only the DIN backbone, the
    target projection and the head remain."""

    def __init__(self, cfg: TrainConfig, n_items: int, profile_cards: list[int], seed: int | None = None):
        self.cfg = cfg
        self.n_items = n_items
        self.profile_cards = list(profile_cards)
        self.params = ParamStore()
        self.schedule = build_schedule(cfg.src.T, cfg.src.alpha_start, cfg.src.alpha_end)
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        p, d_e = self.params, cfg.d_e

        p.add("emb.item", _item_table(n_items, cfg.d_id, rng))
        for f, card in enumerate(self.profile_cards):
            p.add(f"emb.profile.{f}", rng.normal(0.0, 0.1, size=(card, cfg.d_profile)))
        init_din(p, cfg.d_id, cfg.att_hidden, cfg.hidden, d_e, rng)
        tp = p.subtree("target.proj")
        tp.add("weight", glorot(rng, cfg.d_id + cfg.d_im + cfg.d_te, d_e))
        tp.add("bias", np.zeros(d_e))

        if self.uses_aux:
            init_local_activation(p, "att.im", cfg.d_im, cfg.att_hidden, rng)
            init_local_activation(p, "att.te", cfg.d_te, cfg.att_hidden, rng)
        if not cfg.no_mfe:
            init_mfe(p, {"id": cfg.d_id, "im": cfg.d_im, "te": cfg.d_te}, cfg.hidden, d_e, rng)
        elif self.uses_aux:
            for m, d in (("im", cfg.d_im), ("te", cfg.d_te)):
                sub = p.subtree(f"proj.{m}")
                sub.add("weight", glorot(rng, d, d_e))
                sub.add("bias", np.zeros(d_e))
        if not cfg.no_src:
            init_fusion_weights(p, cfg.src.weight_init)
            init_synergy_head(p, d_e, cfg.hidden, rng)
        if not cfg.no_fdaf:
            init_fdaf(p, cfg.d_id, d_e, self.n_blocks, cfg.heads, rng)
        init_head(p, self.head_dim, cfg.hidden, rng)

    # -- structure ------------------------------------------------------------
    @property
    def uses_aux(self) -> bool:
        c = self.cfg
        return not (c.no_mfe and c.no_src and c.no_fdaf)

    @property
    def n_blocks(self) -> int:
        return 2 + (not self.cfg.no_mfe) + (not self.cfg.no_src)

    @property
    def user_dim(self) -> int:
        return len(self.profile_cards) * self.cfg.d_profile

    @property
    def head_dim(self) -> int:
        c = self.cfg
        if not c.no_fdaf:
            return 2 * c.d_e + self.user_dim
        n = 1 + 2 * self.uses_aux + (not c.no_src)
        return n * c.d_e + c.d_e + self.user_dim

    # -- forward ----------------------------------------------------------------
    def make_noise(self, batch: Batch, rng: np.random.Generator | None = None, seed: int = 0) -> np.ndarray:
        """Marginal forward-chain noise (3, B, d_e). Training noise comes from
        ``rng``; without it every sample gets noise seeded by (seed, sample key),
        which makes evaluation deterministic."""
        if rng is not None:
            return draw_noise(self.schedule.T, len(batch), self.cfg.d_e, rng=rng, marginal=True)
        return draw_noise(self.schedule.T, len(batch), self.cfg.d_e, sample_keys=batch.keys,
                          seed=seed, marginal=True)

    def forward(self, batch: Batch, noise: np.ndarray | None = None, bypass_fdaf: bool = False) -> ForwardResult:
        c, p = self.cfg, self.params
        B = len(batch)
        item = p["emb.item"]
        seq_id = T.take_rows(item, batch.id_seq)
        tgt_id = T.take_rows(item, batch.target)
        user = T.concat([T.take_rows(p[f"emb.profile.{f}"], batch.profile[:, f])
                         for f in range(len(self.profile_cards))], axis=-1)
        target_proj = linear(T.concat([tgt_id, T.Tensor(batch.target_im), T.Tensor(batch.target_te)], axis=-1),
                             p["target.proj.weight"], p["target.proj.bias"])
        expert_id, pooled_id = id_expert(seq_id, tgt_id, p)
        parts = {"user": user, "target_proj": target_proj}
        res = ForwardResult(y_out=None, parts=parts)

        if not self.uses_aux:
            parts["primary"] = expert_id
            res.y_out = predict_head([expert_id, user, target_proj], p)
            return res

        pooled = {
            "id": pooled_id,
            "im": sum_pool(target_attention(T.Tensor(batch.im_seq), T.Tensor(batch.target_im), p.subtree("att.im"))),
            "te": sum_pool(target_attention(T.Tensor(batch.te_seq), T.Tensor(batch.target_te), p.subtree("att.te"))),
        }
        if not c.no_mfe:
            mfe = mfe_forward(pooled, expert_id, p)
            expert, fused, expert_sh = mfe.expert, mfe.fused, mfe.expert_sh
            res.l_con = decoupling_loss(mfe.expert, mfe.share)
            parts["mfe"] = mfe
        else:
            expert = {"id": expert_id}
            for m in ("im", "te"):
                expert[m] = linear(pooled[m], p[f"proj.{m}.weight"], p[f"proj.{m}.bias"])
            fused, expert_sh = expert, None
        primary = fused["id"]
        parts["primary"] = primary

        E_syn = None
        if not c.no_src:
            if noise is None:
                noise = self.make_noise(batch, seed=c.seed)
            h_hat = run_mssfi(expert, self.schedule, p.subtree("src.alpha"), noise)
            E_syn = synergy_fuse(h_hat, p)
            res.l_syn = synergy_loss(E_syn, target_proj, batch.y, margin=c.src.syn_margin)
            parts["E_syn"] = E_syn

        if not c.no_fdaf and not bypass_fdaf:
            blocks = [expert["im"], expert["te"]]
            if expert_sh is not None:
                blocks.append(expert_sh)
            if E_syn is not None:
                blocks.append(E_syn)
            E_prime = modality_gate(tgt_id, blocks, p)
            E_c = cross_net(E_prime, p["fdaf.cross.w_c"], p["fdaf.cross.b_c"])
            E_att = noninvasive_fuse(primary, E_c, p, c.heads)
            parts["E_att"] = E_att
            res.y_out = predict_head([E_att, user, target_proj], p)
        elif bypass_fdaf:
            res.y_out = predict_head([primary, user, target_proj], p)
        else:
            feats = [primary, fused["im"], fused["te"]]
            if E_syn is not None:
                feats.append(E_syn)
            res.y_out = predict_head(feats + [user, target_proj], p)
        return res


class DinBackbone:
    """DIN with the shared prediction head: ID embeddings, profile embeddings,
    local-activation pooling, the ID perceptron and the target projection."""

    def __init__(self, cfg: TrainConfig, n_items: int, profile_cards: list[int], seed: int = 0):
        rng = np.random.default_rng(seed)
        self.params = p = ParamStore()
        p.add("emb.item", _item_table(n_items, cfg.d_id, rng))
        for f, card in enumerate(profile_cards):
            p.add(f"emb.profile.{f}", rng.normal(0.0, 0.1, size=(card, cfg.d_profile)))
        init_local_activation(p, "din.att", cfg.d_id, cfg.att_hidden, rng)
        init_mlp(p, "din.mlp", [cfg.d_id, cfg.hidden, cfg.d_e], rng)
        tp = p.subtree("target.proj")
        tp.add("weight", glorot(rng, cfg.d_id + cfg.d_im + cfg.d_te, cfg.d_e))
        tp.add("bias", np.zeros(cfg.d_e))
        init_mlp(p, "head", [2 * cfg.d_e + len(profile_cards) * cfg.d_profile, cfg.hidden, 1], rng)
