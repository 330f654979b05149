from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from diffmsin.core import tensor as T
from diffmsin.core.nn import mlp_forward
from diffmsin.core.params import ParamStore
from diffmsin.errors import ContractError, DimensionError, EmptySequenceError
from diffmsin.mfe import (M_ORDER, decoupling_loss, expert_forward, gate_combine, gate_fuse, id_expert,
                          init_din, init_mfe, mfe_forward, shared_forward, shared_mean)


def _store(rng, d_id=4, d_m=5, hidden=6, d_e=5):
    p = ParamStore()
    init_din(p, d_id, 3, hidden, d_e, rng)
    init_mfe(p, {"id": d_id, "im": d_m, "te": d_m}, hidden, d_e, rng)
    return p


def _cos(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return 0.0 if na == 0 or nb == 0 else float(a @ b / (na * nb))


def test_expert_zero_and_identity(rng):
    p = _store(rng)
    for t in p.subtree("mfe.expert.im").tensors():
        t.data = np.zeros(t.shape)
    assert not expert_forward(T.Tensor(np.zeros((2, 5))), "im", p).data.any()
    q = ParamStore()
    q.add("mfe.expert.te.layer0.weight", np.eye(5))
    q.add("mfe.expert.te.layer0.bias", np.zeros(5))
    x = rng.normal(size=(3, 5))
    assert np.array_equal(expert_forward(T.Tensor(x), "te", q).data, x)


def test_expert_hand_evaluation(rng):
    p = _store(rng)
    for t in p.tensors():
        t.data = rng.normal(size=t.shape)
    x = rng.normal(size=5)
    e = p.subtree("mfe.expert.im")
    W0, b0, W1, b1 = (e[k].data for k in ("layer0.weight", "layer0.bias", "layer1.weight", "layer1.bias"))
    hid = [max(0.0, sum(x[i] * W0[i, j] for i in range(5)) + b0[j]) for j in range(W0.shape[1])]
    ref = [sum(hid[j] * W1[j, k] for j in range(len(hid))) + b1[k] for k in range(W1.shape[1])]
    assert np.max(np.abs(expert_forward(T.Tensor(x[None]), "im", p).data[0] - ref)) < 1e-12


def test_expert_contract(rng):
    p = _store(rng)
    with pytest.raises(ContractError):
        expert_forward(T.Tensor(np.ones((1, 4))), "id", p)
    with pytest.raises(DimensionError):
        expert_forward(T.Tensor(np.ones((1, 3))), "im", p)


def test_id_expert_single_item(rng):
    p = _store(rng)
    item = rng.normal(size=(1, 4))
    out, pooled = id_expert(T.Tensor(item[None]), T.Tensor(item), p)
    assert np.array_equal(pooled.data, item)
    assert np.allclose(out.data, mlp_forward(T.Tensor(item), p.subtree("din.mlp")).data, atol=0)


def test_id_expert_two_identical_items(rng):
    # softmax pooling hands each copy weight 1/2, so the pooled feature is
    # the item itself rather than twice it
    p = _store(rng)
    item, target = rng.normal(size=4), rng.normal(size=(1, 4))
    out1, pooled1 = id_expert(T.Tensor(item[None, None]), T.Tensor(target), p)
    out2, pooled2 = id_expert(T.Tensor(np.tile(item, (1, 2, 1))), T.Tensor(target), p)
    assert np.allclose(pooled2.data, 2 * 0.5 * item[None], atol=1e-15)
    assert np.allclose(out2.data, out1.data, atol=1e-14)


def test_id_expert_permutation_invariant(rng):
    p = _store(rng)
    seq, target = rng.normal(size=(1, 6, 4)), rng.normal(size=(1, 4))
    a = id_expert(T.Tensor(seq), T.Tensor(target), p)[0].data
    b = id_expert(T.Tensor(seq[:, ::-1]), T.Tensor(target), p)[0].data
    assert np.allclose(a, b, atol=1e-14)
    with pytest.raises(EmptySequenceError):
        id_expert(T.Tensor(np.ones((1, 0, 4))), T.Tensor(target), p)


def test_shared_mean_examples(rng):
    v = rng.normal(size=(2, 5))
    assert np.allclose(shared_mean({m: T.Tensor(v) for m in M_ORDER}).data, v, atol=1e-15)
    assert not shared_mean({"id": T.Tensor(v), "im": T.Tensor(-v), "te": T.Tensor(0 * v)}).data.any()
    p = _store(rng)
    E_a = {m: T.Tensor(rng.normal(size=(3, 4 if m == "id" else 5))) for m in M_ORDER}
    share, sh = shared_forward(E_a, p)
    a, b, c = (share[m].data for m in ("im", "te", "id"))
    assert np.max(np.abs(sh.data - (a + b + c) / 3)) < 1e-12


def test_gate_boundaries(rng):
    e, s = rng.normal(size=5), rng.normal(size=5)
    assert np.array_equal(gate_combine(np.ones(5), e, s).data, e)
    assert np.array_equal(gate_combine(np.zeros(5), e, s).data, s)
    assert np.allclose(gate_combine(np.full(5, 0.5), e, s).data, (e + s) / 2, atol=1e-15)


@given(st.integers(0, 2**31 - 1))
def test_gate_fuse_is_convex(seed):
    rng = np.random.default_rng(seed)
    p = _store(rng)
    expert = {m: T.Tensor(rng.normal(size=(3, 5)) * 3) for m in M_ORDER}
    sh = T.Tensor(rng.normal(size=(3, 5)))
    for m, f in gate_fuse(expert, sh, p).items():
        lo = np.minimum(expert[m].data, sh.data)
        hi = np.maximum(expert[m].data, sh.data)
        assert (f.data >= lo - 1e-12).all() and (f.data <= hi + 1e-12).all()


def test_shared_path_removed_gives_experts(rng):
    expert = {m: rng.normal(size=5) for m in M_ORDER}
    for m in M_ORDER:
        assert np.array_equal(gate_combine(np.ones(5), expert[m], np.zeros(5)).data, expert[m])


def test_decoupling_loss_examples(rng):
    eye = np.eye(3)
    v = rng.normal(size=3)
    experts = {m: T.Tensor(eye[i]) for i, m in enumerate(M_ORDER)}
    shares = {m: T.Tensor(v) for m in M_ORDER}
    assert decoupling_loss(experts, shares).item() == pytest.approx(-6.0, abs=1e-15)
    same = {m: T.Tensor(v) for m in M_ORDER}
    assert decoupling_loss(same, dict(same)).item() == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ContractError):
        decoupling_loss({"id": T.Tensor(v)}, shares)


@given(st.integers(0, 2**31 - 1))
def test_decoupling_loss_oracle_range_and_symmetry(seed):
    rng = np.random.default_rng(seed)
    e = {m: rng.normal(size=4) for m in M_ORDER}
    s = {m: rng.normal(size=4) for m in M_ORDER}
    ref = sum(_cos(e[i], e[j]) - _cos(s[i], s[j]) for i, j in permutations(M_ORDER, 2))
    got = decoupling_loss({m: T.Tensor(x) for m, x in e.items()}, {m: T.Tensor(x) for m, x in s.items()}).item()
    assert abs(got - ref) < 1e-10 and -9.0 <= got <= 9.0
    perm = dict(zip(M_ORDER, rng.permutation(M_ORDER)))
    swapped = decoupling_loss({m: T.Tensor(e[perm[m]]) for m in M_ORDER},
                              {m: T.Tensor(s[perm[m]]) for m in M_ORDER}).item()
    assert abs(swapped - got) < 1e-12


def test_decoupling_loss_extremes():
    # three unit vectors have ordered-pair cosine sums in [-3, 6], so the
    # loss spans [-9, 9]; identical experts with shares at 120 degrees hit 9
    ang = 2 * np.pi * np.arange(3) / 3
    star = {m: T.Tensor(np.array([np.cos(a), np.sin(a)])) for m, a in zip(M_ORDER, ang)}
    same = {m: T.Tensor(np.array([1.0, 0.0])) for m in M_ORDER}
    assert decoupling_loss(same, star).item() == pytest.approx(9.0, abs=1e-12)
    assert decoupling_loss(star, same).item() == pytest.approx(-9.0, abs=1e-12)


def test_decoupling_loss_gradient(rng):
    e = {m: T.Tensor(rng.normal(size=4), requires_grad=True) for m in M_ORDER}
    s = {m: T.Tensor(rng.normal(size=4)) for m in M_ORDER}
    T.backward(decoupling_loss(e, s))
    for m in M_ORDER:
        x = e[m].data
        for i in range(4):
            old = x[i]
            x[i] = old + 1e-6
            up = decoupling_loss(e, s).item()
            x[i] = old - 1e-6
            down = decoupling_loss(e, s).item()
            x[i] = old
            num = (up - down) / 2e-6
            assert abs(num - e[m].grad[i]) <= 1e-4 * max(abs(num), 1e-6)


def test_mfe_forward_invariant(rng):
    p = _store(rng)
    pooled = {m: T.Tensor(rng.normal(size=(2, 4 if m == "id" else 5))) for m in M_ORDER}
    out = mfe_forward(pooled, T.Tensor(rng.normal(size=(2, 5))), p)
    mean = (out.share["id"].data + out.share["im"].data + out.share["te"].data) / 3
    assert np.max(np.abs(out.expert_sh.data - mean)) < 1e-12
    assert set(out.fused) == set(M_ORDER)
