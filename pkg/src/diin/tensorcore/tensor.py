"""Dense tensors and the tape that records differentiable ops.

A :class:`Tensor` wraps a numpy array. Ops executed while a :class:`Tape` is
active append a node to that tape; :func:`backward` walks the nodes in reverse
and accumulates gradients into the leaves. Outside a tape, ops run as plain
numpy with no bookkeeping, which is what evaluation uses.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from ..errors import GraphError, GradientError, ShapeError

_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


_debug = False


def set_debug(enabled: bool) -> None:
    """Check every op output for NaN/Inf when enabled."""
    global _debug
    _debug = bool(enabled)


def debug_enabled() -> bool:
    return _debug


class Tensor:
    """n-dimensional float array with an optional gradient."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "_node")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32 if dtype is None else dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape = None
        self._node = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


@dataclass
class Node:
    """One recorded op: which tensors went in, which came out, how to go back."""

    id: int
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    scope: str = ""
    meta: dict[str, Any] = field(default_factory=dict)


class Tape:
    """Append-only record of the ops executed while it is active.

    Use as a context manager::

        with Tape() as tape:
            loss = model.loss(batch)
        grads = backward(tape, loss)
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._scopes: list[str] = []
        self._done = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise GraphError("tape stack corrupted: exiting a tape that is not innermost")
        stack.pop()

    @contextlib.contextmanager
    def scope(self, name: str):
        self._scopes.append(name)
        try:
            yield
        finally:
            self._scopes.pop()

    @property
    def current_scope(self) -> str:
        return ".".join(self._scopes)

    def record(self, op, inputs, output, backward, meta=None) -> Tensor:
        node = Node(len(self.nodes), op, tuple(inputs), output, backward, self.current_scope, meta or {})
        output._tape = self
        output._node = node.id
        self.nodes.append(node)
        return output

    def forward(self, fn: Callable[..., Any], **inputs: Tensor) -> dict[str, Tensor]:
        """Run ``fn(**inputs)`` under this tape and return its named outputs.

        ``fn`` may return a single tensor (named ``"out"``) or a mapping.
        """
        with self:
            result = fn(**inputs)
        if isinstance(result, Tensor):
            return {"out": result}
        return dict(result)

    def consumers(self) -> dict[int, list[Node]]:
        """Map from a tensor's id() to the nodes that read it."""
        users: dict[int, list[Node]] = {}
        for node in self.nodes:
            for inp in node.inputs:
                users.setdefault(id(inp), []).append(node)
        return users


@contextlib.contextmanager
def scope(name: str):
    """Label ops recorded on the active tape (no-op without one)."""
    tape = active_tape()
    if tape is None:
        yield
        return
    with tape.scope(name):
        yield


def record(op: str, inputs: Iterable, out_data: np.ndarray, backward, meta=None) -> Tensor:
    """Wrap ``out_data`` and, if a tape is active and any input needs grad, log it."""
    inputs = tuple(inputs)
    if _debug and not np.all(np.isfinite(out_data)):
        if all(np.all(np.isfinite(t.data)) for t in inputs if isinstance(t, Tensor)):
            raise GradientError(f"{op}: non-finite output from finite inputs")
    needs = any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    tape = active_tape()
    if tape is not None and needs:
        tape.record(op, inputs, out, backward, meta)
    return out


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Reverse-mode sweep from a scalar ``loss``.

    Every leaf with ``requires_grad`` reached from ``loss`` gets ``.grad`` set.
    Tensors listed in ``params`` that the loss never touched get a zero grad.
    Returns a mapping from leaf tensor to its gradient.
    """
    if loss.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.shape}")
    if loss._tape is not tape:
        raise GraphError("loss was not produced by this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes[: loss._node + 1]):
        gout = grads.pop(id(node.output), None)
        if gout is None:
            continue
        gins = node.backward(gout)
        for inp, g in zip(node.inputs, gins):
            if g is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                continue
            if g.shape != inp.shape:
                raise ShapeError(node.op, "gradient shape does not match input", g.shape, inp.shape)
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
            if inp._tape is not tape:
                leaves[key] = inp
    result: dict[Tensor, np.ndarray] = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        leaf.grad = np.asarray(g, dtype=leaf.dtype)
        result[leaf] = leaf.grad
    for p in params or ():
        if p not in result:
            p.grad = np.zeros_like(p.data)
            result[p] = p.grad
    return result


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)
