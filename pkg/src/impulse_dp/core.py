"""Domain types shared by every module.

States are float arrays whose last axis holds the coordinates, so a single
state has shape ``(d,)`` and a batch has shape ``(..., d)``.  All model
callables (running cost, impulse cost, jump map) are vectorized over the
leading axes.  Actions are small non-negative integers.

Wait times are plain floats; ``INFINITY`` (IEEE ``inf``) is the "stop" choice
of the compactified time axis and is always compared exactly, never treated
as a large number.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, ModelError, ModelValidationWarning

INFINITY = math.inf

State = np.ndarray
Action = int
WaitTime = float


def is_stop(theta: WaitTime) -> bool:
    return theta == INFINITY


def check_wait(theta: WaitTime) -> WaitTime:
    theta = float(theta)
    if math.isnan(theta) or theta < 0:
        raise DomainError(f"wait time must be >= 0 or INFINITY, got {theta}")
    return theta


def as_states(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    return x


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned box ``lower <= x <= upper`` intersected with ``A x <= b``."""

    lower: tuple
    upper: tuple
    constraint_matrix: Optional[tuple] = None
    constraint_rhs: Optional[tuple] = None

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be 1-D of equal length")
        if np.any(hi < lo):
            raise ValueError("upper must be >= lower")
        if (self.constraint_matrix is None) != (self.constraint_rhs is None):
            raise ValueError("constraint_matrix and constraint_rhs go together")

    @property
    def dim(self) -> int:
        return len(self.lower)

    def _arrays(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if self.constraint_matrix is None:
            return lo, hi, None, None
        return (lo, hi, np.asarray(self.constraint_matrix, dtype=float),
                np.asarray(self.constraint_rhs, dtype=float))

    def contains(self, x, tol: float = 1e-9) -> np.ndarray:
        x = as_states(x)
        lo, hi, A, b = self._arrays()
        ok = np.all(np.isfinite(x), axis=-1)
        ok &= np.all(x >= lo - tol, axis=-1) & np.all(x <= hi + tol, axis=-1)
        if A is not None:
            ok &= np.all(x @ A.T <= b + tol, axis=-1)
        return ok

    def clamp(self, x) -> np.ndarray:
        lo, hi, _, _ = self._arrays()
        return np.clip(as_states(x), lo, hi)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform samples from the region by rejection from the box."""
        lo, hi, _, _ = self._arrays()
        out = []
        have = 0
        while have < n:
            cand = rng.uniform(lo, hi, size=(max(2 * n, 16), self.dim))
            cand = cand[self.contains(cand, tol=0.0)]
            out.append(cand)
            have += len(cand)
        return np.concatenate(out)[:n]


@dataclass(frozen=True)
class CemeterySpec:
    """Absorbing zero-cost subset where the controlled process is over."""

    predicate: Callable[[np.ndarray], np.ndarray]
    tol: float = 1e-12

    def contains(self, x) -> np.ndarray:
        return np.asarray(self.predicate(as_states(x)), dtype=bool)


@dataclass(frozen=True)
class ImpulseModel:
    """Cost and jump structure of an impulse control problem.

    ``gradual_cost(X)`` is the running cost rate, ``impulse_cost(X, a)`` the
    price of action ``a`` and ``jump(X, a)`` the post-impulse state.
    """

    gradual_cost: Callable[[np.ndarray], np.ndarray]
    impulse_cost: Callable[[np.ndarray, int], np.ndarray]
    jump: Callable[[np.ndarray, int], np.ndarray]
    actions: tuple
    bounds: Bounds
    impulse_cost_floor: Optional[float] = None
    cemetery: Optional[CemeterySpec] = None
    name: str = "model"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        acts = tuple(int(a) for a in self.actions)
        if not acts:
            raise ModelError("action set must be nonempty")
        if any(a < 0 for a in acts) or len(set(acts)) != len(acts):
            raise ModelError("actions must be distinct non-negative integers")
        object.__setattr__(self, "actions", tuple(sorted(acts)))
        if self.impulse_cost_floor is not None and self.impulse_cost_floor <= 0:
            raise ModelError("impulse_cost_floor must be > 0 when set")

    @property
    def dim(self) -> int:
        return self.bounds.dim

    def in_cemetery(self, x) -> np.ndarray:
        x = as_states(x)
        if self.cemetery is None:
            return np.zeros(x.shape[:-1], dtype=bool)
        return self.cemetery.contains(x)


@dataclass(frozen=True)
class StationaryStrategy:
    """Deterministic feedback pair: how long to wait, then which impulse."""

    wait: Callable[[np.ndarray], WaitTime]
    act: Callable[[np.ndarray], Action]


def stop_strategy(model: ImpulseModel) -> StationaryStrategy:
    a0 = model.actions[0]
    return StationaryStrategy(wait=lambda x: INFINITY, act=lambda x: a0)


def impulse_now_strategy(model: ImpulseModel, action: Optional[int] = None) -> StationaryStrategy:
    a = model.actions[0] if action is None else int(action)
    return StationaryStrategy(wait=lambda x: 0.0, act=lambda x: a)


def _check_action(model: ImpulseModel, a) -> int:
    a = int(a)
    if a not in model.actions:
        raise DomainError(f"action {a} is not in the action set {model.actions}")
    return a


def apply_impulse(model: ImpulseModel, x, a) -> np.ndarray:
    """Post-impulse state ``l(x, a)``; raises if either end leaves X."""
    a = _check_action(model, a)
    x = as_states(x)
    if not np.all(model.bounds.contains(x)):
        raise DomainError(f"state {x.tolist()} is outside the state space")
    y = np.asarray(model.jump(x, a), dtype=float)
    if not np.all(model.bounds.contains(y)):
        raise DomainError(f"jump l({x.tolist()}, {a}) = {y.tolist()} leaves the state space")
    return y


def stage_cost(model: ImpulseModel, flow, x, wait: WaitTime, a, q=None) -> float:
    """Cost of waiting ``wait`` along the flow from ``x`` then applying ``a``.

    ``wait == INFINITY`` returns the stopping value and ignores ``a``.
    """
    from . import flow as _flow

    wait = check_wait(wait)
    x = as_states(x)
    if wait == 0.0:
        a = _check_action(model, a)
        return float(model.impulse_cost(x, a))
    if is_stop(wait):
        return _flow.stopping_value(flow, model, x, q)
    a = _check_action(model, a)
    run = _flow.running_cost(flow, model, x, wait, q)
    y = _flow.advance(flow, x, wait)
    return run + float(model.impulse_cost(y, a))


def validate_model(model: ImpulseModel, samples=None, flow=None, n: int = 256,
                   seed: int = 0, flow_times: Sequence[float] = (0.1, 1.0, 10.0),
                   positive: bool = True) -> dict:
    """Sampled structural checks.

    Jumps leaving X and impulse costs below the declared floor raise
    ``ModelError``; sign violations of the positive model only warn so that
    experimental models still pass through the same code path.
    """
    rng = np.random.default_rng(seed)
    X = model.bounds.sample(n, rng) if samples is None else as_states(samples)
    report = {"samples": len(X), "positive": True, "cemetery_ok": True}
    for a in model.actions:
        y = np.asarray(model.jump(X, a), dtype=float)
        bad = ~model.bounds.contains(y)
        if np.any(bad):
            raise ModelError(f"jump with action {a} leaves X at {X[bad][0].tolist()}")
        ci = np.asarray(model.impulse_cost(X, a), dtype=float)
        if model.impulse_cost_floor is not None and np.any(ci < model.impulse_cost_floor):
            raise ModelError(f"impulse cost below floor {model.impulse_cost_floor} for action {a}")
        if positive and np.any(ci < 0):
            report["positive"] = False
    cg = np.asarray(model.gradual_cost(X), dtype=float)
    if positive and np.any(cg < 0):
        report["positive"] = False
    if not report["positive"]:
        warnings.warn(f"{model.name}: negative costs sampled; the positive-model "
                      "guarantees do not apply", ModelValidationWarning, stacklevel=2)
    if model.cemetery is not None:
        Y = X[model.in_cemetery(X)]
        if len(Y):
            if np.any(np.abs(np.asarray(model.gradual_cost(Y))) > 0):
                report["cemetery_ok"] = False
            if flow is not None:
                from . import flow as _flow
                for t in flow_times:
                    if not np.all(model.in_cemetery(_flow.advance(flow, Y, t))):
                        report["cemetery_ok"] = False
        if not report["cemetery_ok"]:
            warnings.warn(f"{model.name}: cemetery set is not absorbing or has nonzero cost",
                          ModelValidationWarning, stacklevel=2)
    return report
