"""Block-by-block finite-difference checks of the whole network.

Each block runs in float64 on small random inputs. Blocks other than the
classifier are scored with a fixed random projection of their output, which
keeps gradients O(1) so relative errors are meaningful. Every trainable tensor
of the model is checked in exactly one block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .config import ModelConfig
from .model import DIIN
from .tensorcore import GradReport, Tensor, grad_check
from .textprep import Side

TOLERANCE = 1e-5
EPS = 1e-6


@dataclass
class BlockResult:
    block: str
    report: GradReport

    @property
    def passed(self) -> bool:
        return self.report.passed


def _side(rng: np.random.Generator, cfg: ModelConfig, lengths) -> Side:
    B, L, W = len(lengths), max(lengths), cfg.max_word_len
    mask = np.zeros((B, L), dtype=bool)
    for b, n in enumerate(lengths):
        mask[b, :n] = True
    ids = np.where(mask, rng.integers(2, cfg.word_vocab_size, (B, L)), 0)
    word_len = rng.integers(1, W + 1, (B, L))
    chars = rng.integers(2, cfg.char_vocab_size, (B, L, W))
    chars = np.where(np.arange(W) < word_len[..., None], chars, 0) * mask[..., None]
    pos = np.where(mask, rng.integers(1, cfg.pos_vocab_size, (B, L)), 0)
    match = (rng.random((B, L)) < 0.5).astype(np.float32) * mask
    return Side(ids, chars, pos, match, mask)


def _projected(fn, shape, rng):
    proj = rng.standard_normal(shape)

    def loss():
        out = fn()
        return tc.reduce_sum(out * proj)
    return loss


def _subset(params: dict[str, Tensor], *prefixes: str) -> dict[str, Tensor]:
    return {n: p for n, p in params.items() if n.startswith(prefixes)}


def run_gradcheck(cfg: ModelConfig, seed: int = 0, probes: int = 20, eps: float = EPS,
                  tol: float = TOLERANCE) -> list[BlockResult]:
    """Check every block of a float64 copy of the model built from ``cfg``."""
    rng = np.random.default_rng(seed)
    model = DIIN(cfg, seed=seed).astype(np.float64)
    params = model.parameters()
    emb, enc, dn = model.embedding, model.encoder, model.densenet
    d = enc.dim
    side = _side(rng, cfg, [7, 5])
    B, L = side.ids.shape
    results = []

    frozen = model.frozen_coords()

    def check(name, fn, group):
        report = grad_check(fn, group, eps=eps, tol=tol, probes=probes, seed=seed, frozen=frozen)
        results.append(BlockResult(name, report))

    # embedding: word table through the concatenated feature vector
    word_only = {"embedding.word": params["embedding.word"]}
    check("embedding", _projected(lambda: emb(side), (B, L, cfg.feature_dim), rng), word_only)

    check("char_cnn", _projected(lambda: emb.char_cnn(side.chars), (B, L, cfg.char_filters), rng),
          _subset(params, "embedding.char_cnn."))

    feats = Tensor(rng.standard_normal((B, L, cfg.feature_dim)))
    mask = side.mask

    def highway_out():
        h = enc.projection(feats)
        for hw in enc.highway:
            h = hw(h)
        return h
    check("highway", _projected(highway_out, (B, L, d), rng),
          _subset(params, "encoder.projection.", "encoder.highway."))

    h_in = Tensor(rng.standard_normal((B, L, d)) * 0.5)

    def attn_fuse():
        abar, _ = enc.attend(h_in, mask)
        x = tc.concat([h_in, abar], axis=-1)
        z = tc.tanh(enc.fuse_z(x))
        r = tc.sigmoid(enc.fuse_r(x))
        f = tc.sigmoid(enc.fuse_f(x))
        return (r * h_in + f * z) * mask[..., None].astype(np.float64)
    check("attention_fuse", _projected(attn_fuse, (B, L, d), rng),
          _subset(params, "encoder.attention", "encoder.fuse_"))

    # DenseNet pieces on random inputs of the right channel counts
    P, H = 9, 8
    smask = np.ones((B, P, H), dtype=bool)
    smask[1, 6:, :] = False
    smask[1, :, 5:] = False
    inter = Tensor(rng.standard_normal((B, P, H, d)))
    check("scale_down", _projected(lambda: dn.scale_down(inter, smask), (B, P, H, dn.scale_down.out_channels), rng),
          _subset(params, "densenet.scale_down."))
    spatial = [(P, H)]
    for _ in dn.blocks:
        p, h = spatial[-1]
        spatial.append((-(-p // 2), -(-h // 2)))
    m = smask
    for i, (block, trans) in enumerate(zip(dn.blocks, dn.transitions)):
        p, h = spatial[i]
        x_in = Tensor(rng.standard_normal((B, p, h, block.convs[0].kernel.shape[2])))
        mi = m
        check(f"dense_block{i}", _projected(lambda b=block, x=x_in, mm=mi: b(x, mm),
                                            (B, p, h, block.out_channels), rng),
              _subset(params, f"densenet.blocks.{i}."))
        t_in = Tensor(rng.standard_normal((B, p, h, block.out_channels)))
        p2, h2 = spatial[i + 1]
        check(f"transition{i}", _projected(lambda t=trans, x=t_in, mm=mi: t(x, mm)[0],
                                           (B, p2, h2, trans.out_channels), rng),
              _subset(params, f"densenet.transitions.{i}."))
        _, m = trans(t_in, mi)

    feat_in = Tensor(rng.standard_normal((B, dn.out_dim)))
    labels = rng.integers(0, cfg.num_classes, B)
    check("classifier", lambda: tc.softmax_cross_entropy(model.classifier(feat_in), labels),
          _subset(params, "classifier."))
    return results
