import json
import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from diffmsin.core import tensor as T
from diffmsin.core.params import ParamStore
from diffmsin.errors import DimensionError, EmptySequenceError, IngestionError
from diffmsin.features import (EmbeddingSequence, Modality, TableEncoder, init_local_activation,
                               load_precomputed, sum_pool, target_attention, write_precomputed)


def _att(rng, d=4, hidden=6):
    p = ParamStore()
    return init_local_activation(p, "att", d, hidden, rng)


def _oracle_weights(seq, target, p):
    W0, b0 = p["layer0.weight"].data, p["layer0.bias"].data
    W1, b1 = p["layer1.weight"].data, p["layer1.bias"].data
    s = []
    for row in seq:
        z = np.concatenate([row, target, row * target]) @ W0 + b0
        s.append((np.maximum(z, 0) @ W1 + b1)[0])
    e = np.exp(np.array(s) - max(s))
    return e / e.sum()


def test_modality_enum_is_closed():
    assert [m.value for m in Modality] == ["id", "im", "te"]


def test_identical_rows_give_uniform_weights(rng):
    p = _att(rng)
    t = rng.normal(size=4)
    _, w = target_attention(np.tile(t, (5, 1)), t, p, return_weights=True)
    assert np.allclose(w.data, 0.2, atol=1e-15)


def test_single_row_has_weight_one(rng):
    p = _att(rng)
    row = rng.normal(size=(1, 4))
    out, w = target_attention(row, rng.normal(size=4), p, return_weights=True)
    assert w.data.tolist() == [1.0]
    assert np.array_equal(out.data, row)


def test_weights_match_external_recomputation(rng):
    p = _att(rng)
    for t in p.tensors():
        t.data = rng.normal(size=t.shape)
    seq, target = rng.normal(size=(3, 4)), rng.normal(size=4)
    out, w = target_attention(seq, target, p, return_weights=True)
    ref = _oracle_weights(seq, target, p)
    assert np.max(np.abs(w.data - ref)) < 1e-10
    assert np.max(np.abs(out.data - seq * ref[:, None])) < 1e-10


def test_batched_matches_unbatched(rng):
    p = _att(rng)
    seq, target = rng.normal(size=(3, 5, 4)), rng.normal(size=(3, 4))
    batched = target_attention(seq, target, p).data
    for b in range(3):
        assert np.allclose(batched[b], target_attention(seq[b], target[b], p).data, atol=1e-14)


@given(st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_weights_form_distribution(n, seed):
    rng = np.random.default_rng(seed)
    p = _att(rng)
    _, w = target_attention(rng.normal(size=(n, 4)) * 5, rng.normal(size=4) * 5, p, return_weights=True)
    assert (w.data >= 0).all() and abs(w.data.sum() - 1.0) < 1e-12


@given(st.integers(2, 7), st.integers(0, 2**31 - 1))
def test_permutation_equivariance(n, seed):
    rng = np.random.default_rng(seed)
    p = _att(rng)
    seq, target = rng.normal(size=(n, 4)), rng.normal(size=4)
    perm = rng.permutation(n)
    out = target_attention(seq, target, p).data
    out_p = target_attention(seq[perm], target, p).data
    assert np.allclose(out_p, out[perm], atol=1e-14)
    assert np.allclose(sum_pool(out_p).data, sum_pool(out).data, atol=1e-14)


def test_attention_errors(rng):
    p = _att(rng)
    with pytest.raises(DimensionError):
        target_attention(np.ones((2, 4)), np.ones(3), p)
    with pytest.raises(EmptySequenceError):
        target_attention(np.ones((0, 4)), np.ones(4), p)
    with pytest.raises(EmptySequenceError):
        EmbeddingSequence(Modality.IM, np.ones((0, 4)))


def test_sum_pool_examples(rng):
    v = rng.normal(size=4)
    assert np.array_equal(sum_pool(v[None]).data, v)
    assert not sum_pool(np.stack([v, -v])).data.any()
    rows = rng.normal(size=(3, 4))
    assert np.array_equal(sum_pool(rows).data, rows[0] + rows[1] + rows[2])
    with pytest.raises(EmptySequenceError):
        sum_pool(np.ones((0, 4)))


def test_precomputed_round_trip(tmp_path, rng):
    table = {3: (rng.normal(size=4), rng.normal(size=2)), 7: (rng.normal(size=4), rng.normal(size=2))}
    write_precomputed(tmp_path / "e.jsonl", table, 4, 2)
    back = load_precomputed(tmp_path / "e.jsonl", 4, 2)
    assert sorted(back) == [3, 7]
    for k, (im, te) in table.items():
        assert back[k][0].tobytes() == im.tobytes() and back[k][1].tobytes() == te.tobytes()
    enc = TableEncoder.from_mapping(back, 4, 2)
    im, te = enc.lookup([7, 3])
    assert np.array_equal(im[0], table[7][0]) and np.array_equal(te[1], table[3][1])


def test_precomputed_empty_warns(tmp_path, caplog):
    (tmp_path / "e.jsonl").write_text("")
    with caplog.at_level(logging.WARNING):
        assert load_precomputed(tmp_path / "e.jsonl") == {}
    assert "empty" in caplog.text
    (tmp_path / "h.jsonl").write_text(json.dumps({"d_im": 2, "d_te": 2}) + "\n")
    with caplog.at_level(logging.WARNING):
        assert load_precomputed(tmp_path / "h.jsonl") == {}


def test_precomputed_short_row_names_the_item(tmp_path):
    lines = [{"d_im": 512, "d_te": 512}, {"item": 41, "im": [0.0] * 256, "te": [0.0] * 512}]
    (tmp_path / "e.jsonl").write_text("\n".join(json.dumps(x) for x in lines) + "\n")
    with pytest.raises(IngestionError) as info:
        load_precomputed(tmp_path / "e.jsonl")
    assert info.value.key == 41 and "41" in str(info.value)


def test_precomputed_header_must_match_config(tmp_path, rng):
    write_precomputed(tmp_path / "e.jsonl", {0: (np.zeros(4), np.zeros(2))}, 4, 2)
    with pytest.raises(IngestionError):
        load_precomputed(tmp_path / "e.jsonl", 512, 512)
    with pytest.raises(IngestionError):
        load_precomputed(tmp_path / "missing.jsonl")
