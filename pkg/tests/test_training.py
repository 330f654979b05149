import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from diffmsin.core import tensor as T
from diffmsin.errors import ConfigError, ContractError, UndefinedAUCError
from diffmsin.experiments import bench_config, fit_to_data
from diffmsin.training import bce_loss, evaluate, evaluate_auc, rela_impr, total_loss, train


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_bce_examples():
    assert bce_loss(np.full(4, 0.5), [0, 1, 1, 0]).item() == pytest.approx(math.log(2), abs=1e-12)
    assert bce_loss(np.array([1.0, 0.0]), [1, 0]).item() < 1e-11
    yo, y = np.array([0.8, 0.3]), np.array([1, 0])
    hand = -(math.log(0.8) + math.log(0.7)) / 2
    assert bce_loss(yo, y).item() == pytest.approx(hand, abs=1e-15)
    assert math.isfinite(bce_loss(np.array([0.0]), [1]).item())


def test_total_loss_is_linear(rng):
    assert total_loss(0.7, -6.0, 0.4, 0.0, 0.0) == 0.7
    assert total_loss(0.0, -6.0, 0.0, 0.1, 0.0) == pytest.approx(-0.6, abs=1e-15)
    for _ in range(10):
        a, b, c, w1, w2 = rng.normal(size=5)
        assert total_loss(a, b, c, w1, w2) == pytest.approx(a + w1 * b + w2 * c, abs=1e-14)


def test_auc_examples():
    assert evaluate_auc([0.9, 0.1], [1, 0]) == 1.0
    assert evaluate_auc([0.3] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    with pytest.raises(UndefinedAUCError):
        evaluate_auc([0.1, 0.2], [1, 1])


@pytest.mark.parametrize("levels", [None, 7])
def test_auc_matches_pairwise_oracle(rng, levels):
    scores = rng.random(1000)
    if levels:
        scores = np.round(scores * levels) / levels
    labels = rng.integers(0, 2, 1000)
    assert abs(evaluate_auc(scores, labels) - pairwise_auc(scores, labels)) < 1e-12


@given(st.integers(0, 2**31 - 1))
def test_auc_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=60)
    y = np.r_[0, 1, rng.integers(0, 2, 58)]
    base = evaluate_auc(s, y)
    assert evaluate_auc(np.exp(s), y) == base
    assert evaluate_auc(3 * s + 1, y) == base


def test_rela_impr_examples():
    assert round(rela_impr(0.7270, 0.6585), 2) == 10.40
    assert rela_impr(0.7, 0.7) == 0.0 and rela_impr(0.7, 0.7, "above_random") == 0.0
    assert rela_impr(0.7270, 0.6585, "above_random") == pytest.approx(43.2, abs=0.05)
    with pytest.raises(ContractError):
        rela_impr(0.7, 0.0)
    with pytest.raises(ContractError):
        rela_impr(0.7, 0.5, "above_random")


def _cfg(tiny, **changes):
    return fit_to_data(bench_config("tiny", **changes), tiny[0])


def test_patience_zero_runs_one_epoch(tiny, tmp_path):
    res = train(_cfg(tiny, early_stop_patience=0), tiny[0], metrics_path=tmp_path / "m.jsonl")
    assert len(res.history) == 1
    rows = [json.loads(line) for line in (tmp_path / "m.jsonl").read_text().splitlines()]
    assert len(rows) == 1
    assert {"epoch", "auc", "l_y", "l_con", "l_syn", "seconds"} <= set(rows[0])


def test_training_is_deterministic(tiny):
    a = train(_cfg(tiny, max_epochs=2), tiny[0])
    b = train(_cfg(tiny, max_epochs=2), tiny[0])
    assert [r.l_y for r in a.history] == [r.l_y for r in b.history]
    assert [r.auc for r in a.history] == [r.auc for r in b.history]
    for k, v in a.best_snapshot.items():
        assert v.tobytes() == b.best_snapshot[k].tobytes()


def test_best_checkpoint_is_restored(tiny):
    res = train(_cfg(tiny, max_epochs=3, early_stop_patience=3), tiny[0])
    assert res.best_auc == max(r.auc for r in res.history)
    assert evaluate(res.model, tiny[0]) == res.best_auc


def test_dataset_smaller_than_batch(tiny):
    with pytest.raises(ConfigError):
        train(_cfg(tiny, batch_size=10**6), tiny[0])


def test_tiny_lr_leaves_metrics_unchanged(tiny):
    from diffmsin.model import DiffMSIN
    cfg = _cfg(tiny, max_epochs=1, lr=1e-300)
    ds = tiny[0]
    before = evaluate(DiffMSIN(cfg, ds.n_items, ds.profile_cards), ds)
    assert train(cfg, ds).history[0].auc == before
