"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from ..errors import GradientError
from .tensor import Tape, Tensor, backward


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-12)


@dataclass
class ParamCheck:
    name: str
    coords: list[tuple[int, ...]]
    analytic: np.ndarray
    numeric: np.ndarray
    rel_errors: np.ndarray
    # coordinates with zero analytic gradient whose numeric gradient is not ~0
    zero_violations: list[tuple[tuple[int, ...], float]] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_errors.max()) if self.rel_errors.size else 0.0

    @property
    def worst_coord(self) -> tuple[int, ...] | None:
        if not self.coords:
            return None
        return self.coords[int(self.rel_errors.argmax())]


@dataclass
class GradReport:
    params: list[ParamCheck] = field(default_factory=list)
    tol: float = 1e-5

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.params), default=0.0)

    @property
    def passed(self) -> bool:
        return not self.failing()

    def failing(self) -> list[ParamCheck]:
        return [p for p in self.params if p.max_rel_error >= self.tol or p.zero_violations]


def _sample(pool: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    if len(pool) <= k:
        return pool
    return np.sort(rng.choice(pool, size=k, replace=False))


def _coords(flat: np.ndarray, shape) -> list[tuple[int, ...]]:
    return [tuple(int(i) for i in np.unravel_index(f, shape)) for f in flat]


def grad_check(
    fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-6,
    tol: float = 1e-5,
    probes: int = 20,
    seed: int = 0,
    frozen: Mapping[str, np.ndarray] | None = None,
    zero_probes: int = 10,
) -> GradReport:
    """Compare analytic gradients of the scalar ``fn()`` with central differences.

    ``fn`` must rebuild the computation from ``params`` on every call and be
    deterministic. Parameters must be float64.

    Up to ``probes`` coordinates per tensor are drawn from those with a nonzero
    analytic gradient and scored by relative error. Relative error is
    meaningless where the true gradient is zero, so up to ``zero_probes``
    coordinates whose analytic gradient is zero (to within 1e-10 of the
    tensor's largest entry) are instead required to have a numeric gradient
    below the finite-difference noise floor.
    ``frozen`` maps a parameter name to a boolean mask of coordinates that are
    never updated (padding rows) and are skipped.
    """
    for name, p in params.items():
        if p.dtype != np.float64:
            raise GradientError(f"{name}: gradient checks need float64 parameters, got {p.dtype}")
    with Tape() as tape:
        loss = fn()
    grads = backward(tape, loss, params.values())
    # finite differences of a loss of size |L| carry rounding noise ~ u·|L|/eps
    noise_floor = 1e3 * np.finfo(np.float64).eps * max(1.0, abs(loss.item())) / eps
    rng = np.random.default_rng(seed)
    report = GradReport(tol=tol)

    def numeric_at(p, c):
        orig = p.data[c]
        p.data[c] = orig + eps
        up = fn().item()
        p.data[c] = orig - eps
        down = fn().item()
        p.data[c] = orig
        return (up - down) / (2 * eps)

    for name, p in params.items():
        g = grads[p]
        if not np.all(np.isfinite(g)):
            c = _coords(np.flatnonzero(~np.isfinite(g))[:1], g.shape)[0]
            raise GradientError(f"{name}: non-finite analytic gradient at coordinate {c}")
        live = np.ones(g.shape, dtype=bool)
        if frozen and name in frozen:
            live &= ~np.broadcast_to(frozen[name], g.shape)
        flat_live = np.flatnonzero(live)
        mag = np.abs(g.reshape(-1)[flat_live])
        # cancellation (e.g. a score term constant under softmax) leaves ~1e-17 residue
        is_zero = mag <= 1e-10 * max(1.0, float(mag.max(initial=0.0)))
        nonzero, zero = flat_live[~is_zero], flat_live[is_zero]
        coords = _coords(_sample(nonzero, probes, rng), g.shape)
        analytic = np.array([g[c] for c in coords], dtype=np.float64)
        numeric = np.array([numeric_at(p, c) for c in coords], dtype=np.float64)
        if not np.all(np.isfinite(numeric)):
            c = coords[int(np.flatnonzero(~np.isfinite(numeric))[0])]
            raise GradientError(f"{name}: non-finite numeric gradient at coordinate {c}")
        errs = np.array([relative_error(a, n) for a, n in zip(analytic, numeric)])
        check = ParamCheck(name, coords, analytic, numeric, errs)
        for c in _coords(_sample(zero, zero_probes, rng), g.shape):
            n = numeric_at(p, c)
            if not np.isfinite(n):
                raise GradientError(f"{name}: non-finite numeric gradient at coordinate {c}")
            if abs(n) > noise_floor:
                check.zero_violations.append((c, n))
        report.params.append(check)
    return report
