"""Losses, metrics and the training loop."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .config import TrainConfig
from .core import tensor as T
from .core.optim import make_optimizer
from .core.tensor import Tensor
from .errors import ConfigError, ContractError, NumericError, UndefinedAUCError
from .model import Batch, DiffMSIN

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12


def bce_loss(y_out, y) -> Tensor:
    """Mean negative log-likelihood with probabilities clamped to [1e-12, 1-1e-12]."""
    p = T.clip(T.as_tensor(y_out), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    ll = T.log(p) * y + T.log(1.0 - p) * (1.0 - y)
    return T.mean(ll) * -1.0


def total_loss(l_y, l_con, l_syn, w1: float, w2: float):
    return l_y + l_con * w1 + l_syn * w2


def evaluate_auc(scores, labels) -> float:
    """Mann-Whitney AUC from average ranks; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def rela_impr(auc_model: float, auc_base: float, mode: str = "plain_relative") -> float:
    """Relative AUC improvement in percent.

    ``plain_relative`` is (a - b) / b; ``above_random`` is
    (a - 0.5) / (b - 0.5) - 1.
    """
    if mode == "plain_relative":
        if auc_base == 0:
            raise ContractError("base AUC is zero")
        return 100.0 * (auc_model - auc_base) / auc_base
    if mode == "above_random":
        if auc_base <= 0.5:
            raise ContractError("above_random mode needs a base AUC above 0.5")
        return 100.0 * ((auc_model - 0.5) / (auc_base - 0.5) - 1.0)
    raise ContractError(f"unknown RelaImpr mode {mode!r}")


@dataclass
class MetricReport:
    epoch: int
    auc: float
    l_y: float
    l_con: float
    l_syn: float
    seconds: float
    rela_impr: float | None = None

    def to_json(self) -> str:
        d = asdict(self)
        if d["rela_impr"] is None:
            del d["rela_impr"]
        return json.dumps(d)


@dataclass
class TrainResult:
    model: DiffMSIN
    best_snapshot: dict
    best_auc: float
    best_epoch: int
    history: list[MetricReport] = field(default_factory=list)

    def save_checkpoint(self, path) -> None:
        from .core.params import save_checkpoint
        save_checkpoint(self.best_snapshot, path)


def forward_loss(model: DiffMSIN, batch: Batch, noise=None):
    cfg = model.cfg
    res = model.forward(batch, noise=noise)
    l_y = bce_loss(res.y_out, batch.y)
    l_con = T.mean(res.l_con) if res.l_con is not None else None
    l_syn = T.mean(res.l_syn) if res.l_syn is not None else None
    loss = l_y
    if l_con is not None:
        loss = loss + l_con * cfg.w1
    if l_syn is not None:
        loss = loss + l_syn * cfg.w2
    return loss, l_y, l_con, l_syn, res


def predict(model: DiffMSIN, dataset, split: str = "test", batch_size: int | None = None):
    """Scores and labels for a split, ordered by sample key."""
    keys, scores, labels = [], [], []
    for batch in dataset.batches(split, batch_size or model.cfg.batch_size, max_len=model.cfg.max_len):
        res = model.forward(batch)
        keys.append(batch.keys)
        scores.append(res.y_out.data)
        labels.append(batch.y)
    keys = np.concatenate(keys)
    order = np.argsort(keys, kind="stable")
    return np.concatenate(scores)[order], np.concatenate(labels)[order]


def evaluate(model: DiffMSIN, dataset, split: str = "test") -> float:
    scores, labels = predict(model, dataset, split)
    if not np.all(np.isfinite(scores)):
        raise NumericError("non-finite predictions during evaluation")
    return evaluate_auc(scores, labels)


def train(cfg: TrainConfig, dataset, metrics_path=None, model: DiffMSIN | None = None,
          base_auc: float | None = None) -> TrainResult:
    """Adam (or SGD) over length-grouped mini-batches with early stopping on
    held-out AUC; the best-AUC parameters are kept."""
    if dataset.size("train") < cfg.batch_size:
        raise ConfigError(f"training split has {dataset.size('train')} samples, fewer than one batch ({cfg.batch_size})")
    if model is None:
        model = DiffMSIN(cfg, dataset.n_items, dataset.profile_cards)
    opt = make_optimizer(cfg.optimizer, model.params, cfg.lr)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    noise_rng = np.random.default_rng([cfg.seed, 2])
    best_auc, best_epoch, best_snap = -math.inf, 0, model.params.snapshot()
    history: list[MetricReport] = []
    bad_epochs = 0
    sink = open(metrics_path, "w") if metrics_path else None
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            t0 = time.perf_counter()
            sums = np.zeros(3)
            n_seen = 0
            for batch in dataset.batches("train", cfg.batch_size, rng=shuffle_rng, max_len=cfg.max_len):
                noise = model.make_noise(batch, rng=noise_rng) if not cfg.no_src else None
                model.params.zero_grad()
                loss, l_y, l_con, l_syn, _ = forward_loss(model, batch, noise)
                if not np.isfinite(loss.item()):
                    raise NumericError(f"non-finite loss at epoch {epoch}")
                T.backward(loss)
                opt.step()
                b = len(batch)
                sums += b * np.array([l_y.item(), l_con.item() if l_con is not None else 0.0,
                                      l_syn.item() if l_syn is not None else 0.0])
                n_seen += b
            auc = evaluate(model, dataset, "test")
            means = sums / max(n_seen, 1)
            report = MetricReport(epoch=epoch, auc=auc, l_y=float(means[0]), l_con=float(means[1]),
                                  l_syn=float(means[2]), seconds=time.perf_counter() - t0,
                                  rela_impr=rela_impr(auc, base_auc) if base_auc else None)
            history.append(report)
            if sink:
                sink.write(report.to_json() + "\n")
                sink.flush()
            log.info("epoch %d auc=%.4f l_y=%.4f", epoch, auc, report.l_y)
            if auc > best_auc:
                best_auc, best_epoch, best_snap = auc, epoch, model.params.snapshot()
                bad_epochs = 0
            else:
                bad_epochs += 1
            if bad_epochs >= cfg.early_stop_patience:
                break
    finally:
        if sink:
            sink.close()
    model.params.restore(best_snap)
    return TrainResult(model=model, best_snapshot=best_snap, best_auc=best_auc,
                       best_epoch=best_epoch, history=history)
