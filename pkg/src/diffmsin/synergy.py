"""Synergistic relationship capture: noise schedule, forward corruption,
cross-modal denoising and the click-conditioned synergy loss."""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .core import tensor as T
from .core.nn import init_mlp, mlp_forward, scaled_dot_attention
from .core.params import ParamStore
from .core.tensor import Tensor
from .errors import ConfigError, ContractError, SingularityError

M_ORDER = ("id", "im", "te")
FUSE_ORDER = ("im", "te", "id")


@dataclass(frozen=True)
class NoiseSchedule:
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.alpha)

    @classmethod
    def from_alphas(cls, alpha) -> "NoiseSchedule":
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.ndim != 1 or alpha.size < 1:
            raise ConfigError("schedule needs at least one step")
        if np.any(alpha <= 0) or np.any(alpha > 1):
            raise ConfigError("alpha values must lie in (0, 1]")
        return cls(alpha=alpha, alpha_bar=np.cumprod(alpha))

    def a(self, t: int) -> float:
        self._check(t)
        return float(self.alpha[t - 1])

    def a_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check(t)
        return float(self.alpha_bar[t - 1])

    def _check(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ContractError(f"step {t} outside [1, {self.T}]")


def build_schedule(T_steps: int, start: float = 0.999, end: float = 0.98) -> NoiseSchedule:
    """Linear alpha grid including both endpoints; T=1 keeps only ``start``."""
    if T_steps < 1:
        raise ConfigError("T must be >= 1")
    return NoiseSchedule.from_alphas(np.linspace(start, end, T_steps))


def forward_step(h, t: int, eps, sched: NoiseSchedule) -> Tensor:
    a = sched.a(t)
    return T.as_tensor(h) * math.sqrt(a) + T.as_tensor(eps) * math.sqrt(1.0 - a)


def exact_invert(h_hat, eps, t: int, sched: NoiseSchedule) -> Tensor:
    a = sched.a(t)
    return (T.as_tensor(h_hat) - T.as_tensor(eps) * math.sqrt(1.0 - a)) * (1.0 / math.sqrt(a))


def reverse_step(h_hat, eps_hat, t: int, sched: NoiseSchedule) -> Tensor:
    a, a_bar = sched.a(t), sched.a_bar(t)
    if a_bar >= 1.0:
        raise SingularityError(f"alpha_bar at step {t} is 1; reverse coefficient undefined")
    coef = (1.0 - a) / math.sqrt(1.0 - a_bar)
    return (T.as_tensor(h_hat) - T.as_tensor(eps_hat) * coef) * (1.0 / math.sqrt(a))


# -- cross-modal interaction ---------------------------------------------------
def init_fusion_weights(store: ParamStore, init: float) -> ParamStore:
    sub = store.subtree("src.alpha")
    for m, n in permutations(M_ORDER, 2):
        sub.add(f"{m}_{n}", np.array([init]))
    return sub


def cross_modal_interaction(h_m, h_n) -> Tensor:
    """Attention(h_m, h_n, h_n) with the single vector h_n as key and value."""
    h_n = T.as_tensor(h_n)
    kv = T.reshape(h_n, h_n.shape[:-1] + (1, h_n.shape[-1]))
    return scaled_dot_attention(h_m, kv, kv)


def ci_denoise(h: dict, weights) -> dict[str, Tensor]:
    """Predicted noise per modality: sum over n != m of alpha_mn * CI(h_m, h_n).

    ``weights`` is a ParamStore subtree or mapping with keys ``"m_n"``.
    """
    out = {}
    for m in h:
        acc = None
        for n in h:
            if n == m:
                continue
            term = cross_modal_interaction(h[m], h[n]) * weights[f"{m}_{n}"]
            acc = term if acc is None else acc + term
        out[m] = acc
    return out


def draw_noise(T_steps: int, batch: int, dim: int, rng: np.random.Generator | None = None,
               sample_keys=None, seed: int = 0, marginal: bool = False) -> np.ndarray:
    """Gaussian noise of shape (T, 3, batch, dim), or (3, batch, dim) when
    ``marginal`` (one draw standing for the whole forward chain).

    With ``sample_keys`` each row is drawn from its own generator seeded by
    (seed, key), so a sample's noise does not depend on its batch neighbours.
    """
    lead = (len(M_ORDER),) if marginal else (T_steps, len(M_ORDER))
    if sample_keys is None:
        return rng.standard_normal(lead + (batch, dim))
    out = np.empty(lead + (batch, dim))
    for b, key in enumerate(sample_keys):
        out[..., b, :] = np.random.default_rng([seed, int(key)]).standard_normal(lead + (dim,))
    return out


def forward_chain_noise(noise: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Noise part of h_T after T sequential forward steps.

    Stepwise noise (T, 3, B, d) is folded exactly as the steps would apply it;
    marginal noise (3, B, d) is scaled by sqrt(1 - alpha_bar_T), which has the
    same distribution.
    """
    if noise.ndim == 3:
        return noise * math.sqrt(1.0 - sched.a_bar(sched.T))
    if noise.shape[0] != sched.T:
        raise ContractError(f"noise has {noise.shape[0]} steps, schedule has {sched.T}")
    acc = np.zeros(noise.shape[1:])
    for t in range(1, sched.T + 1):
        a = sched.a(t)
        acc = acc * math.sqrt(a) + noise[t - 1] * math.sqrt(1.0 - a)
    return acc


def mixing_matrix(weights) -> Tensor:
    """3 x 3 matrix with alpha_mn off the diagonal and zeros on it (rows m,
    columns n, both in (id, im, te) order)."""
    zero = T.Tensor(np.zeros(1))
    cells = [zero if m == n else T.as_tensor(weights[f"{m}_{n}"]) for m in M_ORDER for n in M_ORDER]
    return T.reshape(T.concat(cells, axis=0), (3, 3))


def reverse_operator(sched: NoiseSchedule, weights) -> Tensor:
    """Product A_1 A_2 ... A_T of the per-step reverse maps.

    A single-key attention returns its value, so the predicted noise is
    W h with W the mixing matrix, and one reverse step is the linear map
    A_t = (I - c_t W) / sqrt(alpha_t) acting across modalities.
    """
    W = mixing_matrix(weights)
    eye = np.eye(len(M_ORDER))
    M = None
    for t in range(1, sched.T + 1):
        a, a_bar = sched.a(t), sched.a_bar(t)
        if a_bar >= 1.0:
            raise SingularityError(f"alpha_bar at step {t} is 1; reverse coefficient undefined")
        A = (eye - W * ((1.0 - a) / math.sqrt(1.0 - a_bar))) * (1.0 / math.sqrt(a))
        M = A if M is None else T.matmul(M, A)
    return M


def run_mssfi(h0: dict, sched: NoiseSchedule, weights, noise: np.ndarray,
              stepwise: bool = False) -> dict[str, Tensor]:
    """Forward-diffuse every modality for T steps, then run the reverse chain
    with cross-modal denoising. Modality order in ``noise`` is (id, im, te).

    ``stepwise`` replays every forward, attention and reverse step on the
    tape; the default folds the same computation into one 3 x 3 operator
    applied to the stacked modalities, which agrees up to rounding.
    """
    if stepwise:
        if noise.ndim != 4:
            raise ContractError("stepwise evaluation needs per-step noise (T, 3, B, d)")
        if noise.shape[0] != sched.T:
            raise ContractError(f"noise has {noise.shape[0]} steps, schedule has {sched.T}")
        h = {m: T.as_tensor(h0[m]) for m in M_ORDER}
        for t in range(1, sched.T + 1):
            h = {m: forward_step(h[m], t, noise[t - 1, k], sched) for k, m in enumerate(M_ORDER)}
        for t in range(sched.T, 0, -1):
            eps_hat = ci_denoise(h, weights)
            h = {m: reverse_step(h[m], eps_hat[m], t, sched) for m in M_ORDER}
        return h
    first = T.as_tensor(h0[M_ORDER[0]])
    lead, d = first.shape[:-1], first.shape[-1]
    stacked = T.concat([T.reshape(T.as_tensor(h0[m]), (1, -1)) for m in M_ORDER], axis=0)
    agg = forward_chain_noise(noise, sched).reshape(len(M_ORDER), -1)
    h_T = stacked * math.sqrt(sched.a_bar(sched.T)) + agg
    out = T.matmul(reverse_operator(sched, weights), h_T)
    return {m: T.reshape(T.getitem(out, k), lead + (d,)) for k, m in enumerate(M_ORDER)}


def init_synergy_head(store: ParamStore, d_e: int, hidden: int, rng: np.random.Generator) -> None:
    init_mlp(store, "src.fuse", [3 * d_e, hidden, d_e], rng)


def synergy_fuse(h_hat0: dict, params: ParamStore) -> Tensor:
    """MLP over the ordered concatenation [im, te, id]."""
    x = T.concat([h_hat0[m] for m in FUSE_ORDER], axis=-1)
    return mlp_forward(x, params.subtree("src.fuse"))


def synergy_loss(E_syn, E_target, y, margin: float | None = None) -> Tensor:
    """Per-row (1-y) max(0, -1-cos) + y max(0, 1-cos).

    The negative branch is identically zero for cosines in [-1, 1]. Passing
    ``margin`` replaces it with max(0, cos - margin); that variant is not the
    hinge as defined and is off by default.
    """
    cos = T.cosine_sim(E_syn, E_target)
    y = np.asarray(y, dtype=np.float64)
    pos = T.relu(1.0 - cos)
    neg = T.relu(-1.0 - cos) if margin is None else T.relu(cos - margin)
    return neg * (1.0 - y) + pos * y
