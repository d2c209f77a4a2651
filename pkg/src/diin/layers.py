"""Parameter containers and initializers shared by the model layers."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .tensorcore import Tensor, linear


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape).astype(dtype)


def embedding_init(rng: np.random.Generator, rows: int, dim: int, dtype, scale: float = 0.05) -> np.ndarray:
    table = rng.uniform(-scale, scale, size=(rows, dim)).astype(dtype)
    table[0] = 0.0
    return table


def param(data: np.ndarray, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Module:
    """Walks its attributes in definition order to find parameters.

    Trainable tensors, sub-modules, and lists of sub-modules are discovered
    automatically; names are dotted attribute paths.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def num_params(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def astype(self, dtype) -> "Module":
        """Convert every parameter in place (tensor identities are kept)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32):
        self.weight = param(glorot_uniform(rng, (d_in, d_out), d_in, d_out, dtype))
        self.bias = param(np.zeros(d_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class Conv(Module):
    """Kernel and bias of a ``k×k`` same-padded convolution (applied by callers)."""

    def __init__(self, k: int, c_in: int, c_out: int, rng: np.random.Generator, dtype=np.float32):
        self.kernel = param(glorot_uniform(rng, (k, k, c_in, c_out), k * k * c_in, k * k * c_out, dtype))
        self.bias = param(np.zeros(c_out, dtype=dtype))

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[-1]
