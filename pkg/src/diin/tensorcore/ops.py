"""Differentiable ops over :class:`~diin.tensorcore.tensor.Tensor`.

Every op computes its forward value with numpy and hands a closure for the
vector-Jacobian product to :func:`record`. Spatial ops use channels-last
layout: ``(batch, height, width, channels)``; a missing batch axis is allowed
and added internally.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, record, unbroadcast

_faults: set[str] = set()


@contextlib.contextmanager
def inject_grad_fault(*op_names: str):
    """Deliberately corrupt the backward pass of the named ops (test hook)."""
    added = [n for n in op_names if n not in _faults]
    _faults.update(added)
    try:
        yield
    finally:
        _faults.difference_update(added)


def _maybe_fault(op: str, grad):
    if op in _faults and grad is not None:
        return grad * 1.01 + 1e-3
    return grad


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Promote python scalars / arrays to tensors sharing the other side's dtype."""
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        return a, b
    if isinstance(a, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return Tensor(np.asarray(a, dtype=np.float64)), Tensor(np.asarray(b, dtype=np.float64))


def _const(x, like: Tensor) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=like.dtype))


def _check_broadcast(op, a: Tensor, b: Tensor):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, "operands do not broadcast", a.shape, b.shape) from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("add", a, b)

    def back(g):
        g = _maybe_fault("add", g)
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return record("add", (a, b), a.data + b.data, back)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("sub", a, b)

    def back(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return record("sub", (a, b), a.data - b.data, back)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("mul", a, b)

    def back(g):
        g = _maybe_fault("mul", g)
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record("mul", (a, b), a.data * b.data, back)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def back(g):
        return (_maybe_fault("relu", g * (x.data > 0)),)

    return record("relu", (x,), out, back)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign to avoid overflow in exp
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def back(g):
        return (_maybe_fault("sigmoid", g * out * (1.0 - out)),)

    return record("sigmoid", (x,), out, back)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def back(g):
        return (_maybe_fault("tanh", g * (1.0 - out * out)),)

    return record("tanh", (x,), out, back)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; the identity when not training or ``rate == 0``."""
    if not train or rate <= 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = rng.random(x.shape) >= rate
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    mask = keep.astype(x.dtype) * scale

    def back(g):
        return (g * mask,)

    return record("dropout", (x,), x.data * mask, back, {"rate": rate})


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", f"cannot reshape to {tuple(shape)}", x.shape) from None

    def back(g):
        return (g.reshape(x.shape),)

    return record("reshape", (x,), out, back)


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))

    def back(g):
        return (np.transpose(g, inverse),)

    return record("transpose", (x,), np.transpose(x.data, axes), back)


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]

    def back(g):
        full = np.zeros_like(x.data)
        if _needs_add_at(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return record("getitem", (x,), np.array(out, copy=True), back)


def _needs_add_at(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat", "nothing to concatenate")
    ref = tensors[0]
    nd = ref.ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != ref.shape[i] for i in range(nd) if i != ax):
            raise ShapeError("concat", f"mismatch off axis {axis}", ref.shape, t.shape)
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=ax)

    def back(g):
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * nd
            sl[ax] = slice(lo, hi)
            parts.append(g[tuple(sl)])
        return tuple(parts)

    return record("concat", tensors, out, back, {"axis": ax})


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record("sum", (x,), np.asarray(out), back)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis), 1.0 / n)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = _pair(a, b)
    if a.ndim < 2 and b.ndim < 2:
        raise ShapeError("matmul", "need at least one matrix operand", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2 if b.ndim >= 2 else 0]:
        raise ShapeError("matmul", "inner dimensions differ", a.shape, b.shape)
    out = np.matmul(a.data, b.data)

    def back(g):
        g = _maybe_fault("matmul", g)
        ga = gb = None
        if b.ndim == 1:
            if a.requires_grad:
                ga = g[..., None] * b.data
            if b.requires_grad:
                gb = np.tensordot(g, a.data, axes=(tuple(range(g.ndim)), tuple(range(g.ndim))))
            return ga, gb
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # fold batch axes into rows; one GEMM instead of a batched one
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return record("matmul", (a, b), out, back)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def embedding(table: Tensor, ids: np.ndarray, padding_idx: int | None = 0) -> Tensor:
    """Row lookup ``table[ids]``; the padding row never receives gradient."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError("embedding", f"id out of range [0, {table.shape[0]})", ids.shape, table.shape)
    out = table.data[ids]

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        if padding_idx is not None:
            gt[padding_idx] = 0
        return (_maybe_fault("embedding", gt),)

    return record("embedding", (table,), out, back)


# ---------------------------------------------------------------- convolution

def _as_batched(x: Tensor, op: str) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(op, "expected H×W×C or B×H×W×C", x.shape)
    return x, False


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 convolution with zero "same" padding; no activation.

    ``x`` is ``(B, H, W, Cin)`` or ``(H, W, Cin)``; ``kernel`` is
    ``(kh, kw, Cin, F)`` with odd ``kh`` and ``kw``; ``bias`` is ``(F,)``.
    """
    xb, squeeze = _as_batched(x, "conv2d")
    if kernel.ndim != 4:
        raise ShapeError("conv2d", "kernel must be kh×kw×Cin×F", kernel.shape)
    kh, kw, cin, nf = kernel.shape
    B, H, W, C = xb.shape
    if C != cin:
        raise ShapeError("conv2d", "input channels do not match kernel", xb.shape, kernel.shape)
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv2d", "kernel extents must be odd for same padding", kernel.shape)
    if B * H * W * C == 0:
        raise ShapeError("conv2d", "zero-size input", xb.shape)
    if bias is not None and bias.shape != (nf,):
        raise ShapeError("conv2d", "bias must have one entry per filter", bias.shape, kernel.shape)
    ph, pw = kh // 2, kw // 2
    if kh == 1 and kw == 1:
        cols = xb.data.reshape(-1, C)
    else:
        xp = np.pad(xb.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
        cols = np.empty((B, H, W, kh, kw, C), dtype=xb.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, :, :, i, j, :] = xp[:, i:i + H, j:j + W, :]
        cols = cols.reshape(B * H * W, kh * kw * C)
    kmat = kernel.data.reshape(kh * kw * C, nf)
    out = cols @ kmat
    if bias is not None:
        out += bias.data
    out = out.reshape(B, H, W, nf)

    def back(g):
        g = _maybe_fault("conv2d", g)
        g2 = g.reshape(-1, nf)
        gk = (cols.T @ g2).reshape(kernel.shape) if kernel.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if xb.requires_grad:
            gcols = g2 @ kmat.T
            if kh == 1 and kw == 1:
                gx = gcols.reshape(xb.shape)
            else:
                gcols = gcols.reshape(B, H, W, kh, kw, C)
                gxp = np.zeros((B, H + 2 * ph, W + 2 * pw, C), dtype=xb.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, i:i + H, j:j + W, :] += gcols[:, :, :, i, j, :]
                gx = gxp[:, ph:ph + H, pw:pw + W, :]
        return (gx, gk, gb) if bias is not None else (gx, gk)

    inputs = (xb, kernel, bias) if bias is not None else (xb, kernel)
    y = record("conv2d", inputs, out, back, {"kernel": (kh, kw), "filters": nf})
    return reshape(y, y.shape[1:]) if squeeze else y


def max_pool2d(x: Tensor, mask: np.ndarray | None = None) -> tuple[Tensor, np.ndarray | None] | Tensor:
    """2×2 max-pool, stride 2, ceil mode (ragged edges use partial windows).

    With ``mask`` (boolean, broadcastable to ``(B, H, W, 1)``) masked cells
    never win; windows with no valid cell output 0. Returns ``(y, mask')`` when
    a mask is given, otherwise ``y``. Ties go to the first cell in row-major
    window order.
    """
    xb, squeeze = _as_batched(x, "max_pool2d")
    B, H, W, C = xb.shape
    if H < 1 or W < 1:
        raise ShapeError("max_pool2d", "empty spatial extent", xb.shape)
    H2, W2 = -(-H // 2), -(-W // 2)
    fill = np.full((B, 2 * H2, 2 * W2, C), -np.inf, dtype=xb.dtype)
    fill[:, :H, :W, :] = xb.data
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool).reshape(B, H, W, -1), (B, H, W, 1))
        mfull = np.zeros((B, 2 * H2, 2 * W2, 1), dtype=bool)
        mfull[:, :H, :W, :] = m
        fill = np.where(mfull, fill, -np.inf)
    win = fill.reshape(B, H2, 2, W2, 2, C).transpose(0, 1, 3, 5, 2, 4).reshape(B, H2, W2, C, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    dead = np.isneginf(out)
    out = np.where(dead, 0, out).astype(xb.dtype)

    def back(g):
        gw = np.zeros((B, H2, W2, C, 4), dtype=xb.dtype)
        np.put_along_axis(gw, arg[..., None], np.where(dead, 0, g)[..., None], axis=-1)
        gfull = gw.reshape(B, H2, W2, C, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(B, 2 * H2, 2 * W2, C)
        return (_maybe_fault("max_pool2d", gfull[:, :H, :W, :]),)

    y = record("max_pool2d", (xb,), out, back, {"window": (2, 2), "stride": 2})
    if squeeze:
        y = reshape(y, y.shape[1:])
    if mask is None:
        return y
    pooled = mfull.reshape(B, H2, 2, W2, 2, 1).any(axis=(2, 4))
    return y, pooled


def masked_max(x: Tensor, mask: np.ndarray | None, axes: tuple[int, ...]) -> Tensor:
    """Max over ``axes`` ignoring masked cells; all-masked slices give 0.

    Gradient goes to the first maximal cell of each slice.
    """
    axes = tuple(a % x.ndim for a in axes)
    keep = tuple(i for i in range(x.ndim) if i not in axes)
    perm = keep + axes
    xt = np.transpose(x.data, perm)
    lead = xt.shape[: len(keep)]
    flat = xt.reshape(lead + (-1,))
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        mflat = np.transpose(m, perm).reshape(lead + (-1,))
        flat = np.where(mflat, flat, -np.inf)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    dead = np.isneginf(out)
    out = np.where(dead, 0, out).astype(x.dtype)
    inverse = tuple(np.argsort(perm))

    def back(g):
        gf = np.zeros(flat.shape, dtype=x.dtype)
        np.put_along_axis(gf, arg[..., None], np.where(dead, 0, g)[..., None], axis=-1)
        return (_maybe_fault("masked_max", np.transpose(gf.reshape(xt.shape), inverse)),)

    return record("global_max_pool", (x,), out, back, {"axes": axes})


# ---------------------------------------------------------------- softmax family

def masked_softmax(x: Tensor, mask: np.ndarray | None = None, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with masked entries forced to probability 0."""
    d = x.data
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), d.shape)
        if not np.all(m.any(axis=axis)):
            raise ShapeError("masked_softmax", "a slice has every position masked", d.shape)
        d = np.where(m, d, -np.inf)
    shifted = d - d.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = (e / e.sum(axis=axis, keepdims=True)).astype(x.dtype)

    def back(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (_maybe_fault("masked_softmax", out * (g - inner)),)

    return record("masked_softmax", (x,), out, back)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("softmax_cross_entropy", "expected N×K logits and N labels", logits.shape, labels.shape)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logz
    n = labels.shape[0]
    loss = -logp[np.arange(n), labels].mean()

    def back(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (_maybe_fault("softmax_cross_entropy", p * (g / n)),)

    return record("softmax_cross_entropy", (logits,), np.asarray(loss, dtype=logits.dtype), back)


def constant(x, like: Tensor) -> Tensor:
    return _const(x, like)
