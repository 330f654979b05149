"""Central finite-difference check of the full training loss against the tape."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .core import tensor as T
from .model import Batch, DiffMSIN
from .training import forward_loss

# absolute gradients below this are compared on an absolute scale
GRAD_FLOOR = 1e-6


def miniature_config(**changes) -> TrainConfig:
    """Tiny model: T=4, d_e=16, small encoders and perceptrons."""
    base = dict(d_id=4, d_im=6, d_te=6, d_e=16, hidden=8, att_hidden=5, d_profile=3,
                heads=4, batch_size=4, src={"T": 4}, w1=0.1, w2=0.1)
    base.update(changes)
    return TrainConfig(**base)


def random_batch(cfg: TrainConfig, n_items: int, profile_cards, size: int = 4, length: int = 5,
                 seed: int = 0) -> Batch:
    rng = np.random.default_rng(seed)
    im_table = rng.normal(size=(n_items, cfg.d_im))
    te_table = rng.normal(size=(n_items, cfg.d_te))
    seq = rng.integers(0, n_items, size=(size, length))
    target = rng.integers(0, n_items, size=size)
    y = np.arange(size) % 2
    return Batch(profile=np.stack([rng.integers(0, c, size=size) for c in profile_cards], axis=1),
                 id_seq=seq, target=target, im_seq=im_table[seq], te_seq=te_table[seq],
                 target_im=im_table[target], target_te=te_table[target],
                 y=y.astype(np.float64), keys=np.arange(size))


def relative_error(analytic: float, numeric: float, floor: float = GRAD_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


@dataclass
class GroupResult:
    name: str
    checked: int
    max_rel_err: float
    passed: bool


@dataclass
class GradcheckReport:
    groups: list[GroupResult] = field(default_factory=list)
    seconds: float = 0.0
    tol: float = 1e-4

    @property
    def failures(self) -> list[GroupResult]:
        return [g for g in self.groups if not g.passed]

    @property
    def ok(self) -> bool:
        return bool(self.groups) and not self.failures

    def lines(self) -> list[str]:
        out = [f"{g.name:32s} n={g.checked:3d} max_rel={g.max_rel_err:.2e} {'ok' if g.passed else 'FAIL'}"
               for g in self.groups]
        out.append(f"{len(self.failures)} failing of {len(self.groups)} parameter groups "
                   f"({self.seconds:.1f} s)")
        return out


def gradcheck(cfg: TrainConfig | None = None, eps: float = 1e-5, tol: float = 1e-4,
              per_group: int = 8, seed: int = 0, n_items: int = 12,
              profile_cards=(2, 3)) -> GradcheckReport:
    """Compare tape gradients of L_y + w1 L_con + w2 L_syn with central
    differences for ``per_group`` coordinates of every parameter group.

    Half the coordinates are those with the largest analytic gradient, the
    rest are drawn at random. Noise is fixed so the loss is deterministic.
    """
    t0 = time.perf_counter()
    cfg = cfg or miniature_config()
    model = DiffMSIN(cfg, n_items, list(profile_cards), seed=seed)
    batch = random_batch(cfg, n_items, profile_cards, size=cfg.batch_size, seed=seed + 1)
    noise = model.make_noise(batch, seed=seed) if not cfg.no_src else None

    def loss_value() -> float:
        return forward_loss(model, batch, noise)[0].item()

    model.params.zero_grad()
    loss = forward_loss(model, batch, noise)[0]
    T.backward(loss)
    rng = np.random.default_rng(seed + 2)
    report = GradcheckReport(tol=tol)
    for name, p in model.params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        k = min(per_group, flat.size)
        top = np.argsort(-np.abs(analytic.reshape(-1)), kind="stable")[: (k + 1) // 2]
        rest = np.setdiff1d(np.arange(flat.size), top)
        pick = np.concatenate([top, rng.choice(rest, size=min(k - len(top), rest.size), replace=False)])
        worst = 0.0
        for i in pick:
            old = flat[i]
            flat[i] = old + eps
            up = loss_value()
            flat[i] = old - eps
            down = loss_value()
            flat[i] = old
            numeric = (up - down) / (2.0 * eps)
            worst = max(worst, relative_error(analytic.reshape(-1)[i], numeric))
        report.groups.append(GroupResult(name, len(pick), worst, worst <= tol))
    report.seconds = time.perf_counter() - t0
    return report
