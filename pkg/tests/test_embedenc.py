import dataclasses

import numpy as np
import pytest

from diin import tensorcore as tc
from diin.config import ModelConfig
from diin.embedenc import CharCNN, Embedder, Encoder, FeatureVectorLayout, Highway, interaction_tensor
from diin.errors import ShapeError
from diin.gradsuite import _side
from diin.tensorcore import Tape, Tensor, backward

from oracles import char_cnn_loops, interaction_loops

CFG = dataclasses.replace(ModelConfig.toy(), word_vocab_size=50, char_vocab_size=30, pos_vocab_size=12,
                          word_dim=6, encoder_dim=10)


def zero_params(module):
    for _, p in module.named_parameters():
        p.data[...] = 0


def rng(seed=0):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------- layout

def test_feature_width_arithmetic():
    cfg = dataclasses.replace(CFG, word_dim=4, pos_vocab_size=3, encoder_dim=0)
    assert cfg.feature_dim == 108
    layout = FeatureVectorLayout.from_dims(4, 100, 3)
    assert layout.width == 108
    assert (layout.word, layout.char, layout.pos, layout.match) == (slice(0, 4), slice(4, 104), slice(104, 107),
                                                                     slice(107, 108))


# ---------------------------------------------------------------- char CNN

def test_char_cnn_param_count():
    cnn = CharCNN(30, 8, 100, 5, rng())
    assert cnn.kernel.size + cnn.bias.size == 4100


def test_char_cnn_all_padding_row_is_zero():
    cnn = CharCNN(30, 8, 100, 5, rng())
    cnn.bias.data[:] = 1.0
    out = cnn(np.zeros((2, 16), dtype=int), 16)
    assert out.shape == (2, 100) and not out.data.any()


def test_char_cnn_matches_loop_oracle():
    r = rng(1)
    cnn = CharCNN(30, 8, 100, 5, r, np.float64)
    cnn.bias.data[:] = r.standard_normal(100) * 0.1
    for _ in range(5):
        n = int(r.integers(1, 17))
        ids = np.zeros(16, dtype=int)
        ids[:n] = r.integers(1, 30, n)
        got = cnn(ids[None], 16).data[0]
        want = char_cnn_loops(ids, cnn.table.data, cnn.kernel.data, cnn.bias.data)
        np.testing.assert_allclose(got, want, atol=1e-6)


def test_char_cnn_wrong_width():
    with pytest.raises(ShapeError, match="width"):
        CharCNN(30, 8, 100, 5, rng())(np.ones((1, 12), dtype=int), 16)


# ---------------------------------------------------------------- embedding layer

def test_embedding_eval_is_deterministic_and_padding_is_zero():
    emb = Embedder(CFG, rng())
    side = _side(rng(2), CFG, [6, 3])
    a, b = emb(side).data, emb(side).data
    assert np.array_equal(a, b)
    assert a.shape == (2, 6, CFG.feature_dim)
    assert not a[1, 3:].any()
    assert np.abs(a[~side.mask]).sum() == 0


def test_embedding_layout_segments():
    emb = Embedder(CFG, rng())
    side = _side(rng(3), CFG, [4])
    x = emb(side).data[0]
    L = emb.layout
    np.testing.assert_array_equal(x[:, L.word], emb.word.data[side.ids[0]])
    np.testing.assert_array_equal(x[:, L.pos].argmax(axis=1), side.pos[0])
    np.testing.assert_array_equal(x[:, L.match][:, 0], side.match[0])


def test_embedding_dropout_only_in_train_mode():
    emb = Embedder(dataclasses.replace(CFG, dropout=0.5), rng())
    side = _side(rng(4), CFG, [5, 5])
    ev = emb(side).data
    tr = emb(side, train=True, rng=rng(9)).data
    assert not np.array_equal(ev, tr)
    L = emb.layout
    np.testing.assert_array_equal(ev[..., L.pos], tr[..., L.pos])
    np.testing.assert_array_equal(ev[..., L.match], tr[..., L.match])


def test_embedding_id_out_of_range():
    emb = Embedder(CFG, rng())
    side = _side(rng(), CFG, [3])
    side.pos[0, 0] = CFG.pos_vocab_size
    with pytest.raises(ShapeError):
        emb(side)
    side = _side(rng(), CFG, [3])
    side.ids[0, 0] = CFG.word_vocab_size
    with pytest.raises(ShapeError):
        emb(side)


# ---------------------------------------------------------------- highway

def test_highway_zero_params_halves_input():
    hw = Highway(5, rng(), np.float64)
    zero_params(hw)
    x = rng(1).standard_normal((3, 5))
    np.testing.assert_allclose(hw(Tensor(x)).data, 0.5 * x)


def test_highway_saturated_gate_passes_transform():
    r = rng(2)
    hw = Highway(5, r, np.float64)
    hw.gate.bias.data[:] = 50.0
    x = r.standard_normal((3, 5))
    H = np.tanh(x @ hw.transform.weight.data + hw.transform.bias.data)
    np.testing.assert_allclose(hw(Tensor(x)).data, H, atol=1e-12)


def test_highway_matches_formula():
    r = rng(3)
    hw = Highway(5, r, np.float64)
    hw.gate.bias.data[:] = r.standard_normal(5)
    hw.transform.bias.data[:] = r.standard_normal(5)
    x = r.standard_normal((4, 5))
    T = 1 / (1 + np.exp(-(x @ hw.gate.weight.data + hw.gate.bias.data)))
    H = np.tanh(x @ hw.transform.weight.data + hw.transform.bias.data)
    np.testing.assert_allclose(hw(Tensor(x)).data, T * H + (1 - T) * x, atol=1e-6)


# ---------------------------------------------------------------- encoder

def _encoder(seed=0):
    return Encoder(CFG, rng(seed), np.float64)


def _hidden(enc, feats):
    h = enc.projection(feats)
    for hw in enc.highway:
        h = hw(h)
    return h


def test_attention_single_position():
    enc = _encoder()
    h = Tensor(rng(1).standard_normal((1, 1, 10)))
    abar, alpha = enc.attend(h, np.ones((1, 1), dtype=bool))
    np.testing.assert_allclose(abar.data, h.data)
    assert alpha.data.item() == 1.0


def test_attention_zero_weights_give_mean():
    enc = _encoder()
    enc.attention.data[:] = 0
    h = rng(2).standard_normal((1, 5, 10))
    mask = np.array([[True, True, True, False, False]])
    abar, alpha = enc.attend(Tensor(h), mask)
    np.testing.assert_allclose(alpha.data[0, :, :3], 1 / 3)
    np.testing.assert_allclose(alpha.data[0, :, 3:], 0)
    np.testing.assert_allclose(abar.data[0], np.broadcast_to(h[0, :3].mean(axis=0), (5, 10)))


def test_attention_rows_are_distributions():
    enc = _encoder()
    mask = np.array([[True] * 4 + [False] * 2])
    _, alpha = enc.attend(Tensor(rng(3).standard_normal((1, 6, 10))), mask)
    np.testing.assert_allclose(alpha.data.sum(axis=-1), 1, atol=1e-6)
    assert (alpha.data >= 0).all() and not alpha.data[..., 4:].any()


def test_fuse_with_zero_params_halves_hidden():
    enc = _encoder()
    for lin in (enc.fuse_z, enc.fuse_r, enc.fuse_f):
        zero_params(lin)
    feats = Tensor(rng(4).standard_normal((1, 4, CFG.feature_dim)))
    mask = np.ones((1, 4), dtype=bool)
    np.testing.assert_allclose(enc(feats, mask).data, 0.5 * _hidden(enc, feats).data, atol=1e-12)


def test_encoder_zeroes_padding_and_rejects_empty_rows():
    enc = _encoder()
    feats = Tensor(rng(5).standard_normal((2, 5, CFG.feature_dim)))
    mask = np.array([[1, 1, 1, 1, 1], [1, 1, 0, 0, 0]], dtype=bool)
    out = enc(feats, mask).data
    assert not out[1, 2:].any()
    with pytest.raises(ShapeError, match="no unmasked"):
        enc(feats, np.array([[1, 0, 0, 0, 0], [0, 0, 0, 0, 0]], dtype=bool))


def test_encoder_padding_features_do_not_leak():
    enc = _encoder()
    r = rng(6)
    x = r.standard_normal((1, 6, CFG.feature_dim))
    mask = np.array([[True] * 4 + [False] * 2])
    base = enc(Tensor(x), mask).data
    x2 = x.copy()
    x2[0, 4:] = r.standard_normal((2, CFG.feature_dim)) * 10
    np.testing.assert_allclose(enc(Tensor(x2), mask).data[0, :4], base[0, :4], atol=1e-12)
    x3 = x.copy()
    x3[0, 4:] = 0
    np.testing.assert_allclose(enc(Tensor(x3), mask).data[0, :4], base[0, :4], atol=1e-12)


def test_encoder_permutation_covariance():
    enc = _encoder()
    r = rng(7)
    x = r.standard_normal((1, 5, CFG.feature_dim))
    mask = np.array([[True, True, True, True, False]])
    perm = np.array([3, 0, 4, 1, 2])
    out = enc(Tensor(x), mask).data
    out_p = enc(Tensor(x[:, perm]), mask[:, perm]).data
    np.testing.assert_allclose(out_p, out[:, perm], atol=1e-12)


def test_encoder_unbatched_input():
    enc = _encoder()
    x = rng(8).standard_normal((3, CFG.feature_dim))
    np.testing.assert_allclose(enc(Tensor(x), np.ones(3, dtype=bool)).data,
                               enc(Tensor(x[None]), np.ones((1, 3), dtype=bool)).data[0])


def test_gradients_reach_every_embedding_and_encoder_parameter():
    r = rng(9)
    emb, enc = Embedder(CFG, r, np.float64), Encoder(CFG, r, np.float64)
    side = _side(r, CFG, [6, 4])
    proj = r.standard_normal((2, 6, CFG.hidden_dim))
    with Tape() as tape:
        loss = tc.reduce_sum(enc(emb(side, train=True, rng=r), side.mask, train=True, rng=r) * proj)
    params = {**{f"emb.{n}": p for n, p in emb.named_parameters()},
              **{f"enc.{n}": p for n, p in enc.named_parameters()}}
    grads = backward(tape, loss, params.values())
    for name, p in params.items():
        assert np.abs(grads[p]).sum() > 0, name


# ---------------------------------------------------------------- interaction

def test_interaction_elementwise_product():
    out = interaction_tensor(Tensor(np.array([[1.0, 2.0]])), Tensor(np.array([[3.0, 4.0]])))
    assert out.data[0, 0].tolist() == [3.0, 8.0]


def test_interaction_all_ones():
    out = interaction_tensor(Tensor(np.ones((3, 4))), Tensor(np.ones((2, 4))))
    assert out.shape == (3, 2, 4) and np.all(out.data == 1)


def test_interaction_matches_loops_and_is_symmetric():
    r = rng(10)
    P, H = r.standard_normal((3, 5)), r.standard_normal((4, 5))
    I = interaction_tensor(Tensor(P), Tensor(H)).data
    np.testing.assert_allclose(I, interaction_loops(P, H), atol=1e-6)
    np.testing.assert_array_equal(I, interaction_tensor(Tensor(H), Tensor(P)).data.transpose(1, 0, 2))


def test_interaction_padding_stays_zero_and_dropout_in_train():
    P = np.ones((1, 3, 4))
    P[0, 2] = 0
    out = interaction_tensor(Tensor(P), Tensor(np.ones((1, 2, 4))), dropout=0.5, rng=rng(), train=True).data
    assert not out[0, 2].any()
    assert (out[0, :2] == 0).any() and np.allclose(out[out != 0], 2.0)


def test_interaction_width_mismatch():
    with pytest.raises(ShapeError):
        interaction_tensor(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))))
