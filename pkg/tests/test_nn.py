import numpy as np
import pytest

from diffmsin.core import tensor as T
from diffmsin.core.nn import init_mha, init_mlp, mlp_forward, multi_head_attention, scaled_dot_attention
from diffmsin.core.params import ParamStore
from diffmsin.errors import ConfigError, DimensionError, EmptySequenceError


def test_matmul_examples(rng):
    a = T.Tensor(np.eye(2))
    b = T.Tensor(np.array([[3.0, 4.0], [5.0, 6.0]]))
    assert T.matmul(a, b).data.tolist() == [[3, 4], [5, 6]]
    assert T.matmul(T.Tensor([[1.0, 0.0]]), T.Tensor([[0.0], [7.0]])).data.tolist() == [[0.0]]
    x, y = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    loop = np.array([[sum(x[i, k] * y[k, j] for k in range(3)) for j in range(3)] for i in range(3)])
    assert np.max(np.abs(T.matmul(T.Tensor(x), T.Tensor(y)).data - loop)) < 1e-12


def test_matmul_associativity(rng):
    for _ in range(5):
        a, b, c = (T.Tensor(rng.normal(size=s)) for s in [(3, 4), (4, 5), (5, 2)])
        left = T.matmul(T.matmul(a, b), c).data
        right = T.matmul(a, T.matmul(b, c)).data
        assert np.max(np.abs(left - right)) < 1e-9


def test_softmax_examples(rng):
    assert T.softmax(T.Tensor([0.0, 0.0])).data.tolist() == [0.5, 0.5]
    big = T.softmax(T.Tensor([1000.0, 0.0])).data
    assert abs(big[0] - 1.0) < 1e-12 and big[1] < 1e-12
    e = np.exp([1.0, 2.0, 3.0])
    assert np.max(np.abs(T.softmax(T.Tensor([1.0, 2.0, 3.0])).data - e / e.sum())) < 1e-12
    x = rng.normal(size=6)
    perm = rng.permutation(6)
    assert np.allclose(T.softmax(T.Tensor(x[perm])).data, T.softmax(T.Tensor(x)).data[perm], atol=1e-15)


def test_cosine_examples(rng):
    v = rng.normal(size=4)
    assert T.cosine_sim(v, v).item() == pytest.approx(1.0, abs=1e-15)
    assert T.cosine_sim(v, -v).item() == pytest.approx(-1.0, abs=1e-15)
    assert T.cosine_sim(np.array([1.0, 0.0]), np.array([0.0, 1.0])).item() == 0.0


def test_mlp_examples(rng):
    p = ParamStore()
    init_mlp(p, "m", [3, 3], rng)
    p["m.layer0.weight"].data = np.zeros((3, 3))
    x = T.Tensor(rng.normal(size=(2, 3)))
    assert not mlp_forward(x, p.subtree("m"), activation="relu").data.any()
    p["m.layer0.weight"].data = np.eye(3)
    assert np.array_equal(mlp_forward(x, p.subtree("m")).data, x.data)


def test_mlp_hand_evaluation(rng):
    p = ParamStore()
    init_mlp(p, "m", [2, 3, 1], rng)
    for _, t in p.items():
        t.data = rng.normal(size=t.shape)
    x = rng.normal(size=2)
    W0, b0 = p["m.layer0.weight"].data, p["m.layer0.bias"].data
    W1, b1 = p["m.layer1.weight"].data, p["m.layer1.bias"].data
    hidden = [max(0.0, x[0] * W0[0, j] + x[1] * W0[1, j] + b0[j]) for j in range(3)]
    out = sum(hidden[j] * W1[j, 0] for j in range(3)) + b1[0]
    got = mlp_forward(T.Tensor(x[None]), p.subtree("m")).data[0, 0]
    assert abs(got - out) < 1e-12


def test_mlp_shape_errors(rng):
    p = ParamStore()
    init_mlp(p, "m", [3, 2], rng)
    with pytest.raises(DimensionError):
        mlp_forward(T.Tensor(np.ones((1, 4))), p.subtree("m"))
    with pytest.raises(DimensionError):
        mlp_forward(T.Tensor(np.ones((1, 3))), p.subtree("none"))


def test_attention_single_key_is_exact(rng):
    q, v = rng.normal(size=(4, 5)), rng.normal(size=(4, 1, 5))
    out = scaled_dot_attention(q, rng.normal(size=(4, 1, 5)), v)
    assert np.array_equal(out.data, v[:, 0])


def test_attention_identical_rows_ignore_query(rng):
    row = rng.normal(size=3)
    kv = np.tile(row, (4, 1))
    for _ in range(3):
        out = scaled_dot_attention(rng.normal(size=3), kv, kv)
        assert np.allclose(out.data, row, atol=1e-15)


def test_attention_two_keys_by_hand():
    q = np.array([1.0, 0.0])
    K = np.array([[1.0, 0.0], [0.0, 1.0]])
    V = np.array([[2.0, 0.0], [0.0, 4.0]])
    s = np.array([1.0, 0.0]) / np.sqrt(2.0)
    w = np.exp(s) / np.exp(s).sum()
    out, got_w = scaled_dot_attention(q, K, V, return_weights=True)
    assert np.max(np.abs(out.data - (w[0] * V[0] + w[1] * V[1]))) < 1e-12
    assert np.max(np.abs(got_w.data - w)) < 1e-12


def test_attention_errors():
    with pytest.raises(EmptySequenceError):
        scaled_dot_attention(np.ones(2), np.ones((0, 2)), np.ones((0, 2)))
    with pytest.raises(DimensionError):
        scaled_dot_attention(np.ones(3), np.ones((2, 2)), np.ones((2, 2)))


def _mha(rng, d=4, heads=2):
    p = ParamStore()
    init_mha(p, "a", d, heads, rng)
    return p.subtree("a")


def test_mha_single_head_identity_equals_plain_attention(rng):
    p = _mha(rng, heads=1)
    for name in ("wq", "wk", "wv", "wo"):
        p[name].data = np.eye(4)
    q, kv = rng.normal(size=(3, 4)), rng.normal(size=(3, 5, 4))
    got = multi_head_attention(T.Tensor(q), T.Tensor(kv), 1, p).data
    assert np.allclose(got, scaled_dot_attention(q, kv, kv).data, atol=1e-14)


def test_mha_zero_value_projection(rng):
    p = _mha(rng)
    p["wv"].data = np.zeros((4, 4))
    out = multi_head_attention(T.Tensor(rng.normal(size=(2, 4))), T.Tensor(rng.normal(size=(2, 3, 4))), 2, p)
    assert not out.data.any()


def test_mha_matches_per_head_oracle(rng):
    d, heads, n = 8, 2, 4
    p = _mha(rng, d, heads)
    q, kv = rng.normal(size=(3, d)), rng.normal(size=(3, n, d))
    Wq, Wk, Wv, Wo = (p[k].data for k in ("wq", "wk", "wv", "wo"))
    dh = d // heads
    ref = np.zeros((3, d))
    for b in range(3):
        Q, K, V = q[b] @ Wq, kv[b] @ Wk, kv[b] @ Wv
        cat = []
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            s = K[:, sl] @ Q[sl] / np.sqrt(dh)
            w = np.exp(s - s.max())
            w /= w.sum()
            cat.append(w @ V[:, sl])
        ref[b] = np.concatenate(cat) @ Wo
    got = multi_head_attention(T.Tensor(q), T.Tensor(kv), heads, p).data
    assert np.max(np.abs(got - ref)) < 1e-10


def test_mha_indivisible_heads(rng):
    with pytest.raises(ConfigError):
        _mha(rng, d=6, heads=4)
