"""The full network: embed → encode → interact → DenseNet → softmax."""

from __future__ import annotations

import numpy as np

from . import tensorcore as tc
from .config import ModelConfig
from .embedenc import Embedder, Encoder, interaction_tensor
from .featnet import DenseNet, classify
from .layers import Linear, Module
from .tensorcore import Tensor
from .textprep import Batch


def _ceil_half(n: int) -> int:
    return -(-n // 2)


class DIIN(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        cfg.validate()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.embedding = Embedder(cfg, rng, dtype)
        self.encoder = Encoder(cfg, rng, dtype)
        self.densenet = DenseNet(cfg.hidden_dim, cfg, rng, dtype)
        self.classifier = Linear(self.densenet.out_dim, cfg.num_classes, rng, dtype)

    @property
    def dtype(self):
        return self.classifier.weight.dtype

    def logits(self, batch: Batch, *, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        if train and rng is None:
            raise ValueError("training mode needs a random generator for dropout")
        rate = self.cfg.dropout
        sides = []
        for name, side in (("premise", batch.premise), ("hypothesis", batch.hypothesis)):
            with tc.scope(name):
                feats = self.embedding(side, train=train, rng=rng)
                sides.append(self.encoder(feats, side.mask, train=train, rng=rng))
        inter = interaction_tensor(sides[0], sides[1], dropout=rate, rng=rng, train=train)
        mask = batch.premise.mask[:, :, None] & batch.hypothesis.mask[:, None, :]
        feats = self.densenet(inter, mask)
        with tc.scope("classifier"):
            return self.classifier(tc.dropout(feats, rate, rng, train))

    def loss(self, batch: Batch, *, train: bool = False, rng=None) -> Tensor:
        return tc.softmax_cross_entropy(self.logits(batch, train=train, rng=rng), batch.labels)

    def predict_proba(self, batch: Batch) -> np.ndarray:
        feats = self.features(batch)
        return classify(feats, self.classifier).data

    def features(self, batch: Batch) -> Tensor:
        sides = [self.encoder(self.embedding(s), s.mask) for s in (batch.premise, batch.hypothesis)]
        mask = batch.premise.mask[:, :, None] & batch.hypothesis.mask[:, None, :]
        return self.densenet(interaction_tensor(sides[0], sides[1]), mask)

    def frozen_coords(self) -> dict[str, np.ndarray]:
        """Padding rows of the embedding tables, which stay zero."""
        out = {}
        for name in ("embedding.word", "embedding.char_cnn.table"):
            t = self.parameters()[name]
            mask = np.zeros(t.shape, dtype=bool)
            mask[0] = True
            out[name] = mask
        return out

    def layer_table(self, p: int | None = None, h: int | None = None):
        """Rows of ``(name, kind, tensors, out_shape)`` at the configured length caps."""
        cfg = self.cfg
        p = p or cfg.max_premise_len
        h = h or cfg.max_hypothesis_len
        L = max(p, h)
        emb, enc, dn = self.embedding, self.encoder, self.densenet
        d = enc.dim
        yield "embedding.word", "embedding", [emb.word], (L, cfg.word_dim)
        yield "embedding.char", "embedding", [emb.char_cnn.table], (L, cfg.max_word_len, cfg.char_dim)
        yield "embedding.char_cnn", "conv1d", [emb.char_cnn.kernel, emb.char_cnn.bias], (L, cfg.char_filters)
        yield "embedding.pos_onehot", "onehot", [], (L, cfg.pos_vocab_size)
        yield "encoder.projection", "linear", [enc.projection.weight, enc.projection.bias], (L, d)
        for i, hw in enumerate(enc.highway):
            yield (f"encoder.highway{i}", "highway",
                   [hw.transform.weight, hw.transform.bias, hw.gate.weight, hw.gate.bias], (L, d))
        yield "encoder.attention", "attention", [enc.attention], (L, L)
        fuse = [enc.fuse_z, enc.fuse_r, enc.fuse_f]
        yield "encoder.fuse", "fuse_gate", [t for lin in fuse for t in (lin.weight, lin.bias)], (L, d)
        yield "interaction", "product", [], (p, h, d)
        c = dn.scale_down.out_channels
        yield "densenet.scale_down", "conv2d", [dn.scale_down.conv.kernel, dn.scale_down.conv.bias], (p, h, c)
        for i, (block, trans) in enumerate(zip(dn.blocks, dn.transitions)):
            for j, conv in enumerate(block.convs):
                c += conv.out_channels
                yield f"densenet.block{i}.conv{j}", "conv2d", [conv.kernel, conv.bias], (p, h, c)
            c = trans.out_channels
            yield f"densenet.transition{i}.conv", "conv2d", [trans.conv.kernel, trans.conv.bias], (p, h, c)
            p, h = _ceil_half(p), _ceil_half(h)
            yield f"densenet.transition{i}.pool", "max_pool", [], (p, h, c)
        yield "densenet.global_pool", "global_max_pool", [], (c,)
        yield "classifier", "linear", [self.classifier.weight, self.classifier.bias], (cfg.num_classes,)
