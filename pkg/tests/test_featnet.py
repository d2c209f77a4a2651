import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diin import tensorcore as tc
from diin.config import ModelConfig
from diin.errors import ConfigError, ShapeError
from diin.featnet import DenseBlock, DenseNet, ScaleDown, Transition, classify, count_params
from diin.layers import Linear
from diin.model import DIIN
from diin.tensorcore import Tensor

from audit import record_forward, structural_audit
from oracles import census_closed_form


def rng(seed=0):
    return np.random.default_rng(seed)


def net_cfg(**kw):
    return dataclasses.replace(ModelConfig.toy(), **kw)


# ---------------------------------------------------------------- scale-down / blocks / transitions

def test_scale_down_channels():
    assert ScaleDown(100, 0.3, rng()).out_channels == 30
    assert ScaleDown(17, 1.0, rng()).out_channels == 17
    with pytest.raises(ShapeError):
        ScaleDown(3, 0.3, rng())


def test_scale_down_param_count():
    sd = ScaleDown(100, 0.3, rng())
    assert sd.num_params() == 100 * 30 + 30


def test_dense_block_channels_and_params():
    assert DenseBlock(40, 20, 8, rng()).out_channels == 200
    assert DenseBlock(7, 1, 1, rng()).out_channels == 8
    c, g, n = 13, 5, 4
    assert DenseBlock(c, g, n, rng()).num_params() == sum(9 * (c + i * g) * g + g for i in range(n))


def test_dense_block_forward_shape():
    block = DenseBlock(6, 3, 2, rng())
    y = block(Tensor(rng(1).standard_normal((2, 5, 4, 6)).astype(np.float32)), np.ones((2, 5, 4), dtype=bool))
    assert y.shape == (2, 5, 4, 12)


def test_transition_shapes():
    t = Transition(200, 0.5, rng())
    y, m = t(Tensor(np.zeros((1, 24, 24, 200), dtype=np.float32)), np.ones((1, 24, 24), dtype=bool))
    assert y.shape == (1, 12, 12, 100) and m.shape == (1, 12, 12)
    t1 = Transition(5, 1.0, rng())
    y, _ = t1(Tensor(np.ones((1, 1, 1, 5), dtype=np.float32)), np.ones((1, 1, 1), dtype=bool))
    assert y.shape == (1, 1, 1, 5)
    with pytest.raises(ShapeError):
        Transition(1, 0.5, rng())


def test_transition_graph_has_no_activation():
    t = Transition(6, 0.5, rng())
    x = Tensor(rng(2).standard_normal((1, 4, 4, 6)).astype(np.float32), requires_grad=True)
    with tc.Tape() as tape:
        t(x, np.ones((1, 4, 4), dtype=bool))
    assert [n.op for n in tape.nodes] == ["conv2d", "max_pool2d"]


# ---------------------------------------------------------------- DenseNet

def test_channel_trace_reference_sizes():
    cfg = net_cfg(growth_rate=20, layers_per_block=8, transition_ratio=0.5, first_scale_ratio=0.3)
    net = DenseNet(100, cfg, rng())
    assert net.channel_trace() == [30, 190, 95, 255, 127, 287, 143]
    assert net.out_dim == 143


def test_zero_input_gives_zero_features():
    net = DenseNet(12, net_cfg(), rng())
    out = net(Tensor(np.zeros((2, 9, 8, 12), dtype=np.float32)))
    assert out.shape == (2, net.out_dim) and not out.data.any()


def test_output_dim_independent_of_spatial_size():
    net = DenseNet(12, net_cfg(), rng())
    x = rng(1).standard_normal((1, 16, 18, 12)).astype(np.float32)
    assert net(Tensor(x[:, :8, :9])).shape == net(Tensor(x)).shape == (1, net.out_dim)


def test_padding_does_not_change_an_example():
    net = DenseNet(12, net_cfg(), rng())
    x = rng(2).standard_normal((1, 16, 18, 12)).astype(np.float32)
    small = net(Tensor(x[:, :7, :11])).data
    padded = np.zeros_like(x)
    padded[:, :7, :11] = x[:, :7, :11]
    mask = np.zeros((1, 16, 18), dtype=bool)
    mask[:, :7, :11] = True
    np.testing.assert_allclose(net(Tensor(padded), mask).data, small, rtol=1e-5, atol=1e-6)


def test_densenet_rejects_wrong_channels():
    net = DenseNet(12, net_cfg(), rng())
    with pytest.raises(ShapeError):
        net(Tensor(np.zeros((1, 4, 4, 11), dtype=np.float32)))


# ---------------------------------------------------------------- classifier

def test_classify_uniform_and_peaked():
    layer = Linear(10, 3, rng())
    assert layer.num_params() == 33
    layer.weight.data[:] = 0
    p = classify(Tensor(rng().standard_normal((2, 10)).astype(np.float32)), layer).data
    np.testing.assert_allclose(p, 1 / 3, atol=1e-7)
    layer.bias.data[:] = [10, 0, 0]
    p = classify(Tensor(np.ones(10, dtype=np.float32)), layer).data
    assert p.argmax() == 0
    assert p[0] == pytest.approx(np.exp(10) / (np.exp(10) + 2), abs=1e-6)
    assert p[0] == pytest.approx(0.99991, abs=5e-6)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4))
def test_classify_valid_distribution(values):
    layer = Linear(4, 3, rng(), np.float64)
    p = classify(Tensor(np.array(values)), layer).data
    assert (p >= 0).all() and abs(p.sum() - 1) < 1e-6


# ---------------------------------------------------------------- census

def test_census_matches_closed_form_toy():
    cfg = ModelConfig.toy()
    census = count_params(DIIN(cfg))
    rows, total = census_closed_form(cfg.word_vocab_size, cfg.char_vocab_size, cfg.pos_vocab_size, cfg.word_dim,
                                     g=cfg.growth_rate, n=cfg.layers_per_block)
    assert census.total_params == total
    assert census["embedding.char_cnn"].params == 4100 == rows["char_cnn"]
    assert census["embedding.word"].params == rows["word"]
    assert census["classifier"].params == rows["classifier"]


@pytest.mark.parametrize("overrides", [
    dict(word_dim=8, growth_rate=5, layers_per_block=1, encoder_dim=20),
    dict(word_dim=12, first_scale_ratio=0.5, transition_ratio=0.4, highway_layers=1),
])
def test_census_matches_closed_form_variants(overrides):
    cfg = net_cfg(word_vocab_size=200, char_vocab_size=40, pos_vocab_size=20, **overrides)
    rows, total = census_closed_form(200, 40, 20, cfg.word_dim, d=cfg.encoder_dim or None,
                                     highway=cfg.highway_layers, eta=cfg.first_scale_ratio,
                                     g=cfg.growth_rate, n=cfg.layers_per_block, theta=cfg.transition_ratio)
    model = DIIN(cfg)
    assert count_params(model).total_params == total == model.num_params()


def test_census_word_table_entry():
    cfg = net_cfg(word_vocab_size=1000, word_dim=8)
    assert count_params(DIIN(cfg))["embedding.word"].params == 8000


def test_census_is_data_independent():
    model = DIIN(ModelConfig.toy())
    a = count_params(model)
    record_forward(model)
    b = model.layer_table(10, 12)
    assert a.total_params == sum(sum(t.size for t in row[2]) for row in b)
    assert count_params(DIIN(ModelConfig.toy(), seed=5)).machine() == a.machine()


def test_census_formats():
    census = count_params(DIIN(ModelConfig.toy()))
    lines = census.machine().splitlines()
    assert lines[-1] == f"TOTAL,{census.total_params}"
    assert all(len(line.split(",")) == 4 for line in lines[:-1])
    assert "embedding.char_cnn,conv1d,4100,32x100" in lines
    table = census.table()
    assert f"{census.total_params:,}" in table


# ---------------------------------------------------------------- structure

def test_structural_audit():
    for name, (ok, detail) in structural_audit(DIIN(ModelConfig.toy())).items():
        assert ok, f"{name}: {detail}"


def test_block_count_is_fixed_at_three():
    with pytest.raises(ConfigError, match="num_blocks"):
        DIIN(net_cfg(num_blocks=2))
