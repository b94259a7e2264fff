"""Execution of stationary strategies along the deterministic flow."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import INFINITY, ImpulseModel, apply_impulse, as_states, check_wait
from .flow import FlowSpec, QuadratureConfig, advance, horizon_for, running_cost, stopping_value

STOPPED = "STOPPED"
CEMETERY = "CEMETERY"
HORIZON = "HORIZON"
IMPULSE_CAP = "IMPULSE_CAP"


@dataclass(frozen=True)
class ImpulseEvent:
    time: float
    pre: tuple
    action: int
    post: tuple
    cost: float


@dataclass(frozen=True)
class Segment:
    """A stretch of pure flow; ``duration`` is INFINITY for the final stop."""

    start_time: float
    start: tuple
    duration: float
    cost: float
    times: np.ndarray = field(repr=False)
    points: np.ndarray = field(repr=False)


@dataclass
class Trajectory:
    segments: list
    impulses: list
    total_cost: float
    terminated: str

    @property
    def n_impulses(self) -> int:
        return len(self.impulses)

    def summary(self) -> dict:
        return {"total_cost": self.total_cost, "impulses": self.n_impulses,
                "terminated": self.terminated}

    def rows(self):
        """``(t, *x, phase)`` rows: sampled flow points and zero-duration impulse rows."""
        events = sorted(self.impulses, key=lambda e: e.time)
        out = []
        k = 0
        for seg in self.segments:
            while k < len(events) and events[k].time < seg.start_time:
                out.extend(_impulse_rows(events[k]))
                k += 1
            for t, x in zip(seg.times, seg.points):
                out.append((float(t), *map(float, x), "flow"))
            end = seg.start_time + seg.duration
            while k < len(events) and events[k].time <= end and math.isfinite(end):
                out.extend(_impulse_rows(events[k]))
                k += 1
        for e in events[k:]:
            out.extend(_impulse_rows(e))
        return out


def _impulse_rows(e: ImpulseEvent):
    return [(e.time, *e.pre, "impulse"), (e.time, *e.post, "impulse")]


def _path(flow, x, t0, duration, dt, min_points):
    n = max(min_points, int(math.ceil(duration / dt)) + 1)
    s = np.linspace(0.0, duration, n)
    return t0 + s, advance(flow, x, s)


def simulate(model: ImpulseModel, flow: FlowSpec, strategy, x0, max_impulses: int = 1000,
             horizon: Optional[float] = None, q: Optional[QuadratureConfig] = None,
             sample_dt: float = 0.01, min_points: int = 200,
             stop_path: Optional[float] = None) -> Trajectory:
    """Run ``strategy`` from ``x0`` until it stops, reaches the cemetery or a cap.

    ``horizon`` caps model time (HORIZON); ``max_impulses`` caps consecutive
    zero-wait impulses (IMPULSE_CAP).  A stop adds the stopping value; its
    path is sampled over ``stop_path`` time units (default: the flow horizon)
    for presentation only.
    """
    x = as_states(x0).copy()
    if not bool(np.all(model.bounds.contains(x))):
        raise ValueError(f"initial state {x.tolist()} is outside the state space")
    horizon = INFINITY if horizon is None else float(horizon)
    stop_path = horizon_for(flow, q) if stop_path is None else float(stop_path)
    t = 0.0
    total = 0.0
    segments, impulses = [], []
    zero_run = 0
    while True:
        if bool(model.in_cemetery(x)):
            return Trajectory(segments, impulses, total, CEMETERY)
        theta = check_wait(strategy.wait(x))
        if theta == INFINITY:
            cost = stopping_value(flow, model, x, q)
            span = min(stop_path, horizon - t)
            times, pts = _path(flow, x, t, span, sample_dt, min_points)
            segments.append(Segment(t, tuple(x), INFINITY, cost, times, pts))
            return Trajectory(segments, impulses, total + cost, STOPPED)
        if t + theta > horizon:
            span = horizon - t
            cost = running_cost(flow, model, x, span, q)
            times, pts = _path(flow, x, t, span, sample_dt, min_points)
            segments.append(Segment(t, tuple(x), span, cost, times, pts))
            return Trajectory(segments, impulses, total + cost, HORIZON)
        if theta > 0:
            cost = running_cost(flow, model, x, theta, q)
            times, pts = _path(flow, x, t, theta, sample_dt, min_points)
            segments.append(Segment(t, tuple(x), theta, cost, times, pts))
            total += cost
            x = advance(flow, x, theta)
            t += theta
            zero_run = 0
        else:
            zero_run += 1
            if zero_run > max_impulses:
                return Trajectory(segments, impulses, total, IMPULSE_CAP)
        a = int(strategy.act(x))
        c = float(model.impulse_cost(x, a))
        y = apply_impulse(model, x, a)
        impulses.append(ImpulseEvent(t, tuple(map(float, x)), a, tuple(map(float, y)), c))
        total += c
        x = y


def evaluate_strategy(model: ImpulseModel, flow: FlowSpec, strategy, states,
                      max_impulses: int = 1000, horizon: Optional[float] = None,
                      q: Optional[QuadratureConfig] = None) -> list:
    """Total cost of ``strategy`` from each state."""
    states = as_states(states).reshape(-1, model.dim)
    return [simulate(model, flow, strategy, x, max_impulses, horizon, q,
                     min_points=2, sample_dt=math.inf).total_cost for x in states]


def write_trajectories(path, trajectories, labels=None, dim: int = 2) -> None:
    """CSV ``[run,]t,x1,..,xd,phase`` with 17 significant digits."""
    labels = list(labels) if labels is not None else None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["t"] + [f"x{i + 1}" for i in range(dim)] + ["phase"]
        w.writerow((["run"] if labels is not None else []) + head)
        for k, tr in enumerate(trajectories):
            for row in tr.rows():
                vals = [format(v, ".17g") for v in row[:-1]] + [row[-1]]
                w.writerow(([labels[k]] if labels is not None else []) + vals)
