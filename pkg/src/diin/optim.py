"""Optimizers with a time-dependent L2 penalty folded into the gradient, and
the plateau rule that moves training from one optimizer to the next.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .config import L2Schedule, OptimPolicy, Stage
from .errors import GradientError


def l2_coefficient(step: int, schedule: L2Schedule) -> float:
    """``lambda_full · min(1, exp((step − t_full) / tau))``."""
    if step >= schedule.t_full:
        return schedule.lambda_full
    return schedule.lambda_full * math.exp((step - schedule.t_full) / schedule.tau)


def l2_penalty(params: Mapping[str, "object"], lam: float) -> float:
    """``lam/2 · Σ w²`` over all parameters (reported, not differentiated)."""
    return 0.5 * lam * float(sum(np.sum(np.square(p.data, dtype=np.float64)) for p in params.values()))


@dataclass
class OptimizerState:
    kind: str
    lr: float
    rho: float = 0.95
    eps_adadelta: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    slots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    steps: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_policy(cls, stage: Stage, policy: OptimPolicy) -> "OptimizerState":
        return cls(stage.kind, stage.lr, rho=policy.adadelta_rho, eps_adadelta=policy.adadelta_eps,
                   beta1=policy.adam_beta1, beta2=policy.adam_beta2, eps_adam=policy.adam_eps)

    def switch(self, kind: str, lr: float) -> None:
        """Change optimizer; accumulated statistics do not carry over."""
        self.kind, self.lr = kind, lr
        self.slots.clear()
        self.steps.clear()

    def _slot(self, name: str, key: str, like: np.ndarray) -> np.ndarray:
        slots = self.slots.setdefault(name, {})
        if key not in slots:
            slots[key] = np.zeros_like(like)
        return slots[key]

    def slot_names(self) -> tuple[str, ...]:
        return {"sgd": (), "adadelta": ("acc_grad", "acc_delta"), "adam": ("m", "v")}[self.kind]


def apply_update(params: Mapping[str, "object"], grads: Mapping[str, np.ndarray],
                 state: OptimizerState, lam: float) -> None:
    """One in-place update of every parameter in ``params``.

    The L2 term is coupled: ``g' = g + lam·w`` is what the optimizer sees.
    """
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient for parameter {name}")
    for name, p in params.items():
        w = p.data
        g = grads[name]
        if lam:
            g = g + lam * w
        if state.kind == "sgd":
            w -= state.lr * g
        elif state.kind == "adadelta":
            acc_g = state._slot(name, "acc_grad", w)
            acc_d = state._slot(name, "acc_delta", w)
            rho, eps = state.rho, state.eps_adadelta
            acc_g *= rho
            acc_g += (1 - rho) * g * g
            delta = -np.sqrt(acc_d + eps) / np.sqrt(acc_g + eps) * g
            acc_d *= rho
            acc_d += (1 - rho) * delta * delta
            w += state.lr * delta
        elif state.kind == "adam":
            m = state._slot(name, "m", w)
            v = state._slot(name, "v", w)
            t = state.steps.get(name, 0) + 1
            state.steps[name] = t
            b1, b2 = state.beta1, state.beta2
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            w -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps_adam)
        else:
            raise ValueError(f"unknown optimizer kind {state.kind!r}")


# ---------------------------------------------------------------- switching

STAY = "stay"
ADVANCE = "advance"
EXHAUSTED = "exhausted"


@dataclass(frozen=True)
class Decision:
    action: str
    stage: int

    def __str__(self):
        return self.action if self.action != ADVANCE else f"advance-to {self.stage}"


@dataclass
class PlateauTracker:
    """Incremental form of :func:`plateau_decision` used by the training loop."""

    stage: int = 0
    best: float = math.inf
    bad_evals: int = 0
    exhausted: bool = False

    def observe(self, loss: float, stages: Sequence[Stage]) -> Decision:
        if self.exhausted:
            return Decision(EXHAUSTED, self.stage)
        if loss < self.best:
            self.best = loss
            self.bad_evals = 0
        else:
            self.bad_evals += 1
        if self.bad_evals >= stages[self.stage].patience:
            if self.stage == len(stages) - 1:
                self.exhausted = True
                return Decision(EXHAUSTED, self.stage)
            self.stage += 1
            self.bad_evals = 0
            self.best = math.inf
            return Decision(ADVANCE, self.stage)
        return Decision(STAY, self.stage)

    def to_dict(self) -> dict:
        return {"stage": self.stage, "best": None if math.isinf(self.best) else self.best,
                "bad_evals": self.bad_evals, "exhausted": self.exhausted}

    @classmethod
    def from_dict(cls, d: dict) -> "PlateauTracker":
        best = math.inf if d["best"] is None else float(d["best"])
        return cls(int(d["stage"]), best, int(d["bad_evals"]), bool(d["exhausted"]))


def plateau_decision(eval_losses: Sequence[float], policy: OptimPolicy | Sequence[Stage]) -> Decision:
    """Decision taken right after the last loss in ``eval_losses``.

    A loss counts as an improvement only if it is strictly below the best seen
    in the current stage. When the run of non-improving evaluations reaches
    the current stage's patience the policy moves to the next stage, where
    both the counter and the stage best start afresh; at the last stage it
    reports exhaustion.
    """
    stages = policy.stages if isinstance(policy, OptimPolicy) else tuple(policy)
    tracker = PlateauTracker()
    decision = Decision(STAY, 0)
    for loss in eval_losses:
        decision = tracker.observe(loss, stages)
        if decision.action == EXHAUSTED:
            break
    return decision
