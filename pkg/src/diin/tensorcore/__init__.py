"""Minimal numpy tensor engine with reverse-mode autodiff."""

from .gradcheck import GradReport, ParamCheck, grad_check, relative_error
from .ops import (
    add,
    concat,
    conv2d,
    dropout,
    embedding,
    getitem,
    inject_grad_fault,
    linear,
    masked_max,
    masked_softmax,
    matmul,
    max_pool2d,
    mean,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax_cross_entropy,
    sub,
    swap_last,
    tanh,
    transpose,
)
from .ops import sum as reduce_sum
from .tensor import Node, Tape, Tensor, active_tape, backward, scope, set_debug


def forward(tape: Tape, fn, **inputs: Tensor) -> dict[str, Tensor]:
    """Evaluate ``fn(**inputs)`` while recording on ``tape``."""
    return tape.forward(fn, **inputs)


__all__ = [
    "GradReport", "Node", "ParamCheck", "Tape", "Tensor", "active_tape", "add", "backward",
    "concat", "conv2d", "dropout", "embedding", "forward", "getitem", "grad_check",
    "inject_grad_fault", "linear", "masked_max", "masked_softmax", "matmul", "max_pool2d",
    "mean", "mul", "reduce_sum", "relative_error", "relu", "reshape", "scope", "set_debug",
    "sigmoid", "softmax_cross_entropy", "sub", "swap_last", "tanh", "transpose",
]
