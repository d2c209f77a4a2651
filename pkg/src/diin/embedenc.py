"""Embedding layer, sentence encoder, and the premise×hypothesis interaction tensor.

Per-token features are laid out as ``[word | char-CNN | POS one-hot | match]``.
The encoder projects them to the hidden width, runs highway layers, then a
self-attention step whose summary is merged back through a three-gate fuse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .config import ModelConfig
from .errors import ShapeError
from .layers import Linear, Module, embedding_init, glorot_uniform, param
from .tensorcore import Tensor
from .textprep import Side


@dataclass(frozen=True)
class FeatureVectorLayout:
    word: slice
    char: slice
    pos: slice
    match: slice

    @classmethod
    def from_dims(cls, word_dim: int, char_dim: int, pos_dim: int) -> "FeatureVectorLayout":
        a, b, c = word_dim, word_dim + char_dim, word_dim + char_dim + pos_dim
        return cls(slice(0, a), slice(a, b), slice(b, c), slice(c, c + 1))

    @property
    def width(self) -> int:
        return self.match.stop


class CharCNN(Module):
    """Character embeddings → 1-D conv (bias, ReLU) → max over character positions."""

    def __init__(self, n_chars: int, char_dim: int, filters: int, kernel: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.table = param(embedding_init(rng, n_chars, char_dim, dtype))
        self.kernel = param(glorot_uniform(rng, (kernel, char_dim, filters), kernel * char_dim,
                                           kernel * filters, dtype))
        self.bias = param(np.zeros(filters, dtype=dtype))

    @property
    def filters(self) -> int:
        return self.kernel.shape[-1]

    def __call__(self, char_ids: np.ndarray, width: int | None = None, *,
                 dropout: float = 0.0, rng=None, train: bool = False) -> Tensor:
        char_ids = np.asarray(char_ids)
        if width is not None and char_ids.shape[-1] != width:
            raise ShapeError("char_cnn", f"char rows must have width {width}", char_ids.shape)
        lead, W = char_ids.shape[:-1], char_ids.shape[-1]
        ids = char_ids.reshape(-1, W)
        n = ids.shape[0]
        k, c, f = self.kernel.shape
        with tc.scope("char_cnn"):
            e = tc.embedding(self.table, ids)
            e = tc.dropout(e, dropout, rng, train)
            x = tc.reshape(e, (n, 1, W, c))
            y = tc.relu(tc.conv2d(x, tc.reshape(self.kernel, (1, k, c, f)), self.bias))
            # padding characters never win the max; all-padding rows give zeros
            out = tc.masked_max(y, (ids != 0)[:, None, :, None], axes=(1, 2))
        return tc.reshape(out, lead + (f,))


class Embedder(Module):
    """Builds the per-token feature vector for one side of a batch."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.word = param(embedding_init(rng, cfg.word_vocab_size, cfg.word_dim, dtype))
        self.char_cnn = CharCNN(cfg.char_vocab_size, cfg.char_dim, cfg.char_filters,
                                cfg.char_kernel, rng, dtype)
        self._pos_dim = cfg.pos_vocab_size
        self._width = cfg.max_word_len
        self._dropout = cfg.dropout
        self.layout = FeatureVectorLayout.from_dims(cfg.word_dim, cfg.char_filters, cfg.pos_vocab_size)

    def load_pretrained(self, vectors: dict[str, np.ndarray], words: list[str]) -> int:
        """Overwrite rows of the word table; returns how many rows were set."""
        hits = 0
        for i, w in enumerate(words):
            if i < 2:
                continue
            vec = vectors.get(w)
            if vec is not None:
                self.word.data[i] = vec
                hits += 1
        return hits

    def __call__(self, side: Side, *, train: bool = False, rng=None) -> Tensor:
        if side.pos.size and (side.pos.min() < 0 or side.pos.max() >= self._pos_dim):
            raise ShapeError("embed_sequence", f"POS id out of range [0, {self._pos_dim})", side.pos.shape)
        dtype = self.word.dtype
        with tc.scope("embedding"):
            w = tc.embedding(self.word, side.ids)
            w = tc.dropout(w, self._dropout, rng, train)
            c = self.char_cnn(side.chars, self._width, dropout=self._dropout, rng=rng, train=train)
            onehot = np.eye(self._pos_dim, dtype=dtype)
            onehot[0] = 0.0
            pos = Tensor(onehot[side.pos])
            match = Tensor((side.match * side.mask)[..., None].astype(dtype))
            return tc.concat([w, c, pos, match], axis=-1)


class Highway(Module):
    """``T⊙tanh(W_H x + b_H) + (1−T)⊙x`` with ``T = σ(W_T x + b_T)``."""

    def __init__(self, d: int, rng: np.random.Generator, dtype=np.float32):
        self.transform = Linear(d, d, rng, dtype)
        self.gate = Linear(d, d, rng, dtype)

    def __call__(self, x: Tensor, *, dropout: float = 0.0, rng=None, train: bool = False) -> Tensor:
        xi = tc.dropout(x, dropout, rng, train)
        t = tc.sigmoid(self.gate(xi))
        h = tc.tanh(self.transform(xi))
        return t * h + x - t * x


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        d_feat, d = cfg.feature_dim, cfg.hidden_dim
        self.projection = Linear(d_feat, d, rng, dtype)
        self.highway = [Highway(d, rng, dtype) for _ in range(cfg.highway_layers)]
        self.attention = param(glorot_uniform(rng, (3 * d,), 3 * d, 1, dtype))
        self.fuse_z = Linear(2 * d, d, rng, dtype)
        self.fuse_r = Linear(2 * d, d, rng, dtype)
        self.fuse_f = Linear(2 * d, d, rng, dtype)
        self._d = d
        self._dropout = cfg.dropout

    @property
    def dim(self) -> int:
        return self._d

    def attend(self, h: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
        """Self-attention summary of each position; returns ``(summary, weights)``."""
        d = self._d
        B, L, _ = h.shape
        w1, w2, w3 = self.attention[:d], self.attention[d:2 * d], self.attention[2 * d:]
        s = tc.matmul(h * w3, tc.swap_last(h))
        s = s + tc.reshape(tc.matmul(h, w1), (B, L, 1)) + tc.reshape(tc.matmul(h, w2), (B, 1, L))
        alpha = tc.masked_softmax(s, mask[:, None, :], axis=-1)
        return tc.matmul(alpha, h), alpha

    def __call__(self, feats: Tensor, mask: np.ndarray, *, train: bool = False, rng=None) -> Tensor:
        squeeze = feats.ndim == 2
        if squeeze:
            feats = tc.reshape(feats, (1,) + feats.shape)
            mask = np.asarray(mask)[None]
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=1).all():
            raise ShapeError("encode", "a sentence has no unmasked position", mask.shape)
        rate = self._dropout
        with tc.scope("encoder"):
            h = self.projection(feats)
            for i, hw in enumerate(self.highway):
                with tc.scope(f"highway{i}"):
                    h = hw(h, dropout=rate, rng=rng, train=train)
            with tc.scope("attention"):
                abar, _ = self.attend(h, mask)
            with tc.scope("fuse"):
                x = tc.dropout(tc.concat([h, abar], axis=-1), rate, rng, train)
                z = tc.tanh(self.fuse_z(x))
                r = tc.sigmoid(self.fuse_r(x))
                f = tc.sigmoid(self.fuse_f(x))
                out = (r * h + f * z) * mask[..., None].astype(h.dtype)
        return tc.reshape(out, out.shape[1:]) if squeeze else out


def interaction_tensor(p_enc: Tensor, h_enc: Tensor, *, dropout: float = 0.0, rng=None,
                       train: bool = False) -> Tensor:
    """``I[i, j] = P[i] ⊙ H[j]``; batched inputs give ``(B, p, h, d)``.

    Padded positions are already zero in the encodings, so they stay zero here.
    """
    if p_enc.shape[-1] != h_enc.shape[-1]:
        raise ShapeError("interaction_tensor", "encoding widths differ", p_enc.shape, h_enc.shape)
    if p_enc.ndim == 2:
        p, d = p_enc.shape
        out = tc.reshape(p_enc, (p, 1, d)) * tc.reshape(h_enc, (1, h_enc.shape[0], d))
    else:
        B, p, d = p_enc.shape
        out = tc.reshape(p_enc, (B, p, 1, d)) * tc.reshape(h_enc, (B, 1, h_enc.shape[1], d))
    with tc.scope("interaction"):
        return tc.dropout(out, dropout, rng, train)
