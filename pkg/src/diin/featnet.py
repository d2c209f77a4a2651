"""DenseNet feature extractor, softmax classifier, and parameter census.

Structure (no batch norm, no average pooling)::

    1×1 conv + ReLU            scale-down to floor(d·η) channels
    3 × [dense block           n × (3×3 conv + bias + ReLU, concatenated)
         transition]           1×1 conv + bias (no activation), 2×2 max-pool
    global max-pool            over the remaining spatial cells

All convolutions carry a bias. Spatial masks keep every example's result
independent of how much padding its batch needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensorcore as tc
from .config import ModelConfig
from .errors import ShapeError
from .layers import Conv, Linear, Module
from .tensorcore import Tensor


def scaled_channels(c: int, ratio: float) -> int:
    return int(c * ratio)


def _masked(x: Tensor, mask: np.ndarray) -> Tensor:
    return x * mask[..., None].astype(x.dtype)


class ScaleDown(Module):
    def __init__(self, d: int, ratio: float, rng, dtype=np.float32):
        c = scaled_channels(d, ratio)
        if c < 1:
            raise ShapeError("scale_down", f"floor({d}·{ratio}) = 0 channels")
        self.conv = Conv(1, d, c, rng, dtype)

    @property
    def out_channels(self) -> int:
        return self.conv.out_channels

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        with tc.scope("scale_down"):
            return _masked(tc.relu(tc.conv2d(x, self.conv.kernel, self.conv.bias)), mask)


class DenseBlock(Module):
    def __init__(self, c_in: int, growth: int, layers: int, rng, dtype=np.float32):
        if layers < 1:
            raise ShapeError("dense_block", "need at least one layer")
        self.convs = [Conv(3, c_in + i * growth, growth, rng, dtype) for i in range(layers)]
        self._c_in = c_in
        self._growth = growth

    @property
    def out_channels(self) -> int:
        return self._c_in + self._growth * len(self.convs)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        if x.shape[-1] != self._c_in:
            raise ShapeError("dense_block", f"expected {self._c_in} input channels", x.shape)
        for i, conv in enumerate(self.convs):
            with tc.scope(f"conv{i}"):
                y = _masked(tc.relu(tc.conv2d(x, conv.kernel, conv.bias)), mask)
                x = tc.concat([x, y], axis=-1)
        return x


class Transition(Module):
    """1×1 conv (channel ratio θ) followed directly by 2×2 max-pooling."""

    def __init__(self, c_in: int, ratio: float, rng, dtype=np.float32):
        c = scaled_channels(c_in, ratio)
        if c < 1:
            raise ShapeError("transition", f"floor({c_in}·{ratio}) = 0 channels")
        self.conv = Conv(1, c_in, c, rng, dtype)

    @property
    def out_channels(self) -> int:
        return self.conv.out_channels

    def __call__(self, x: Tensor, mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
        y = tc.conv2d(x, self.conv.kernel, self.conv.bias)
        y, pooled = tc.max_pool2d(y, mask[..., None])
        return y, pooled[..., 0]


class DenseNet(Module):
    def __init__(self, d: int, cfg: ModelConfig, rng, dtype=np.float32):
        self.scale_down = ScaleDown(d, cfg.first_scale_ratio, rng, dtype)
        c = self.scale_down.out_channels
        self.blocks, self.transitions = [], []
        for _ in range(cfg.num_blocks):
            block = DenseBlock(c, cfg.growth_rate, cfg.layers_per_block, rng, dtype)
            trans = Transition(block.out_channels, cfg.transition_ratio, rng, dtype)
            self.blocks.append(block)
            self.transitions.append(trans)
            c = trans.out_channels
        self._out = c
        self._d = d

    @property
    def out_dim(self) -> int:
        return self._out

    def channel_trace(self) -> list[int]:
        """Channel count after scale-down and after every block and transition."""
        trace = [self.scale_down.out_channels]
        for b, t in zip(self.blocks, self.transitions):
            trace += [b.out_channels, t.out_channels]
        return trace

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        squeeze = x.ndim == 3
        if squeeze:
            x = tc.reshape(x, (1,) + x.shape)
        B, P, H, d = x.shape
        if d != self._d:
            raise ShapeError("densenet_features", f"expected {self._d} channels", x.shape)
        if P < 1 or H < 1:
            raise ShapeError("densenet_features", "spatial extent collapsed to zero", x.shape)
        mask = np.ones((B, P, H), dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(B, P, H)
        with tc.scope("densenet"):
            x = self.scale_down(x, mask)
            for i, (block, trans) in enumerate(zip(self.blocks, self.transitions)):
                with tc.scope(f"block{i}"):
                    x = block(x, mask)
                with tc.scope(f"transition{i}"):
                    x, mask = trans(x, mask)
            with tc.scope("global_pool"):
                out = tc.masked_max(x, mask[..., None], axes=(1, 2))
        return tc.reshape(out, out.shape[1:]) if squeeze else out


def classify(features: Tensor, layer: Linear, *, dropout: float = 0.0, rng=None, train: bool = False) -> Tensor:
    """Class probabilities from a feature vector (or a batch of them)."""
    logits = layer(tc.dropout(features, dropout, rng, train))
    return tc.masked_softmax(logits, None, axis=-1)


# ---------------------------------------------------------------- census

@dataclass
class CensusEntry:
    name: str
    kind: str
    params: int
    out_shape: tuple[int, ...]

    def shape_str(self) -> str:
        return "x".join(str(s) for s in self.out_shape)


@dataclass
class LayerCensus:
    entries: list[CensusEntry] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(e.params for e in self.entries)

    def __getitem__(self, name: str) -> CensusEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def count(self, kind: str) -> int:
        return sum(1 for e in self.entries if e.kind == kind)

    def machine(self) -> str:
        lines = [f"{e.name},{e.kind},{e.params},{e.shape_str()}" for e in self.entries]
        lines.append(f"TOTAL,{self.total_params}")
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        rows = [("layer", "kind", "params", "output")]
        rows += [(e.name, e.kind, f"{e.params:,}", e.shape_str()) for e in self.entries]
        rows.append(("total", "", f"{self.total_params:,}", ""))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        out = []
        for k, r in enumerate(rows):
            out.append(f"{r[0]:<{widths[0]}}  {r[1]:<{widths[1]}}  {r[2]:>{widths[2]}}  {r[3]}".rstrip())
            if k == 0 or k == len(rows) - 2:
                out.append("-" * (sum(widths) + 6))
        return "\n".join(out) + "\n"

    def to_list(self) -> list[dict]:
        return [{"name": e.name, "kind": e.kind, "params": e.params, "out_shape": list(e.out_shape)}
                for e in self.entries]


def count_params(model) -> LayerCensus:
    """Per-layer trainable parameter counts for a model exposing ``layer_table()``.

    ``layer_table()`` yields ``(name, kind, tensors, out_shape)``. Every trainable
    tensor of the model must appear in exactly one row.
    """
    census = LayerCensus()
    seen: dict[int, str] = {}
    for name, kind, tensors, out_shape in model.layer_table():
        for t in tensors:
            if id(t) in seen:
                raise ValueError(f"tensor counted twice: in {seen[id(t)]} and {name}")
            seen[id(t)] = name
        census.entries.append(CensusEntry(name, kind, int(sum(t.size for t in tensors)), tuple(out_shape)))
    missing = [n for n, p in model.named_parameters() if id(p) not in seen]
    if missing:
        raise ValueError(f"parameters missing from census: {missing}")
    return census
