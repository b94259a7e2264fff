"""Integral Bellman operator, value iteration and strategy extraction on a grid.

The backup at a state ``x`` minimizes

    R(x, theta) + I{theta < inf} * min_a [C^I(phi(x, theta), a) + V(l(phi(x, theta), a))]

over the wait time ``theta`` in ``{0} U (0, T] U {inf}``.  The continuum is
covered by a log-spaced grid plus a golden-section refinement around the best
grid point.  Among candidates within ``tie_rel * (1 + |v|)`` of the minimum
the smallest wait wins, and among actions the smallest id.

Sweeps are Jacobi: every node of sweep ``n + 1`` reads the frozen field of
sweep ``n``, so results do not depend on chunking or worker count.
"""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
from scipy import ndimage

from .core import INFINITY, Bounds, ImpulseModel, as_states
from .errors import NonConvergenceError, NonMonotoneIterationWarning
from .flow import (DEFAULT_QUADRATURE, FlowSpec, QuadratureConfig, cost_table, horizon_for,
                   integrate_segments, stopping_values)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Grid:
    """Rectangular node lattice with a mask of the nodes inside X."""

    lower: tuple
    upper: tuple
    counts: tuple
    mask: np.ndarray = dc_field(repr=False, compare=False)

    def __post_init__(self):
        if not (len(self.lower) == len(self.upper) == len(self.counts)):
            raise ValueError("lower, upper and counts must have equal length")
        if any(int(n) < 2 for n in self.counts):
            raise ValueError("every axis needs at least 2 nodes")
        if any(not (hi > lo) for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("grid axes need upper > lower")
        if tuple(self.mask.shape) != tuple(self.counts):
            raise ValueError("mask shape must equal counts")
        if not self.mask.any():
            raise ValueError("grid mask is empty")

    @classmethod
    def over(cls, bounds: Bounds, counts) -> "Grid":
        lo = tuple(float(v) for v in bounds.lower)
        hi = tuple(float(v) for v in bounds.upper)
        if not all(map(math.isfinite, lo + hi)):
            raise ValueError("grids need a bounded box")
        counts = tuple(int(n) for n in counts)
        axes = [np.linspace(a, b, n) for a, b, n in zip(lo, hi, counts)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return cls(lo, hi, counts, bounds.contains(pts, tol=1e-9))

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def spacing(self) -> np.ndarray:
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return (hi - lo) / (np.asarray(self.counts) - 1)

    def axes(self):
        return [np.linspace(a, b, n) for a, b, n in zip(self.lower, self.upper, self.counts)]

    def all_nodes(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def nodes(self) -> np.ndarray:
        """Coordinates of the masked-in nodes, in C order, shape ``(n, d)``."""
        return self.all_nodes()[self.mask]

    def node_index(self) -> np.ndarray:
        """Integer lattice indices of the masked-in nodes, shape ``(n, d)``."""
        return np.argwhere(self.mask)

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    def scatter(self, values, fill=np.nan) -> np.ndarray:
        """Place per-node values back onto the full lattice."""
        out = np.full(self.counts, fill, dtype=np.asarray(values).dtype if fill is None else float)
        out[self.mask] = values
        return out


class ValueField:
    """A value function sampled at the masked nodes of a grid.

    Evaluation clamps to the grid box and interpolates multilinearly.  Cells
    with some corners outside the mask use the affine least-squares fit
    through the valid corners (exact barycentric interpolation on the half
    cells along a diagonal boundary); cells with no valid corner take the
    nearest valid node.
    """

    def __init__(self, grid: Grid, values, version: int = 0):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.size,):
            raise ValueError(f"expected {grid.size} node values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("value field must be finite")
        self.grid = grid
        self.values = values
        self.version = int(version)
        self._full = grid.scatter(values, fill=0.0)
        _, nearest = ndimage.distance_transform_edt(~grid.mask, return_indices=True)
        self._nearest = nearest
        d = grid.dim
        self._corners = np.array(np.meshgrid(*([[0, 1]] * d), indexing="ij")).reshape(d, -1).T

    @classmethod
    def zeros(cls, grid: Grid) -> "ValueField":
        return cls(grid, np.zeros(grid.size))

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable, version: int = 0) -> "ValueField":
        return cls(grid, np.asarray(fn(grid.nodes()), dtype=float), version)

    def with_values(self, values, version: Optional[int] = None) -> "ValueField":
        return ValueField(self.grid, values, self.version + 1 if version is None else version)

    def as_array(self) -> np.ndarray:
        return self.grid.scatter(self.values)

    def __call__(self, X) -> np.ndarray:
        X = as_states(X)
        shape = X.shape[:-1]
        P = X.reshape(-1, X.shape[-1])
        g = self.grid
        lo = np.asarray(g.lower)
        hi = np.asarray(g.upper)
        counts = np.asarray(g.counts)
        u = (np.clip(P, lo, hi) - lo) / g.spacing
        i0 = np.clip(np.floor(u).astype(np.int64), 0, counts - 2)
        t = np.clip(u - i0, 0.0, 1.0)
        idx = i0[:, None, :] + self._corners[None, :, :]
        key = tuple(idx[..., k] for k in range(g.dim))
        cv = self._full[key]
        ok = g.mask[key]
        w = np.prod(np.where(self._corners[None, :, :] == 1, t[:, None, :], 1.0 - t[:, None, :]),
                    axis=-1)
        out = np.sum(w * cv, axis=1)
        nvalid = ok.sum(axis=1)
        partial = nvalid < len(self._corners)
        if partial.any():
            out[partial] = self._partial(t[partial], cv[partial], ok[partial],
                                         nvalid[partial], i0[partial])
        return out.reshape(shape)

    def _partial(self, t, cv, ok, nvalid, i0):
        out = np.empty(len(t))
        none = nvalid == 0
        if none.any():
            key = tuple(self._nearest[k][tuple(i0[none].T)] for k in range(self.grid.dim))
            out[none] = self._full[key]
        one = nvalid == 1
        if one.any():
            out[one] = np.sum(np.where(ok[one], cv[one], 0.0), axis=1)
        many = nvalid >= 2
        if many.any():
            A = np.concatenate([np.ones((len(self._corners), 1)), self._corners], axis=1)
            W = ok[many].astype(float)[:, :, None]
            coef = np.linalg.pinv(W * A[None]) @ (W[..., 0] * cv[many])[..., None]
            feat = np.concatenate([np.ones((int(many.sum()), 1)), t[many]], axis=1)
            out[many] = np.sum(feat * coef[..., 0], axis=1)
        return out


@dataclass(frozen=True)
class ThetaSearchConfig:
    """Discretization of the wait-time infimum.

    ``count`` log-spaced waits on ``[min_fraction * T, T]`` plus ``0`` and
    INFINITY, then ``refinement`` golden-section passes of ``golden_iters``
    iterations each on the bracket around the best finite grid wait.
    """

    count: int = 64
    horizon: Optional[float] = None
    min_fraction: float = 1e-6
    refinement: int = 1
    golden_iters: int = 48
    tie_rel: float = 1e-7
    gauss_points: int = 8
    chunk: int = 2048

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("count must be >= 2")
        if not 0 < self.min_fraction < 1:
            raise ValueError("min_fraction must lie in (0, 1)")
        if self.refinement < 0 or self.golden_iters < 1:
            raise ValueError("refinement must be >= 0 and golden_iters >= 1")
        if self.tie_rel < 0:
            raise ValueError("tie_rel must be >= 0")

    def thetas(self, flow: FlowSpec, q: Optional[QuadratureConfig] = None) -> np.ndarray:
        T = float(self.horizon) if self.horizon is not None else horizon_for(flow, q)
        return np.geomspace(self.min_fraction * T, T, self.count)


@dataclass(frozen=True)
class IterationReport:
    n: int
    sup_change: float
    monotone_ok: bool
    wall_time: float


def impulse_values(model: ImpulseModel, V: Callable, Y):
    """Vectorized ``min_a [C^I(y, a) + V(l(y, a))]`` with the argmin action."""
    Y = as_states(Y)
    best = None
    act = None
    for a in model.actions:
        v = np.asarray(model.impulse_cost(Y, a), dtype=float) + np.asarray(V(model.jump(Y, a)))
        if best is None:
            best = v
            act = np.full(v.shape, a, dtype=np.int64)
        else:
            better = v < best
            best = np.where(better, v, best)
            act = np.where(better, a, act)
    return best, act


def impulse_value(model: ImpulseModel, V: Callable, x):
    """``(min_a [C^I(x, a) + V(l(x, a))], argmin a)`` for a single state."""
    v, a = impulse_values(model, V, as_states(x)[None, :])
    return float(v[0]), int(a[0])


class _Backup:
    """Backup operator over a fixed set of states.

    Everything that does not depend on V (the running-cost table along each
    trajectory, feasibility of each wait, stopping values) is computed once.
    """

    def __init__(self, model: ImpulseModel, flow: FlowSpec, X, cfg: ThetaSearchConfig,
                 q: Optional[QuadratureConfig], lift: Optional[Callable] = None,
                 stop_values=None):
        self.model = model
        self.flow = flow
        self.cfg = cfg
        self.q = q or DEFAULT_QUADRATURE
        self.X = as_states(X).reshape(-1, model.dim)
        self.lift = lift
        self.thetas = cfg.thetas(flow, self.q)
        rate = model.gradual_cost
        self.states, self.costs = cost_table(flow, rate, self.X, self.thetas, cfg.gauss_points)
        self.feasible = model.bounds.contains(self.states, tol=1e-7)
        self.start_ok = model.bounds.contains(self.X, tol=1e-7)
        if stop_values is None:
            stop_values = stopping_values(flow, model, self.X, self.q)
        self.stop = np.asarray(stop_values, dtype=float)

    def _cont(self, field):
        if self.lift is None:
            return field
        return lambda Y: self.lift(field, Y)

    def _objective(self, V, anchors, anchor_cost, base, theta):
        end, seg = integrate_segments(self.flow, self.model.gradual_cost, anchors,
                                      theta - base, self.cfg.gauss_points)
        iv, act = impulse_values(self.model, V, end)
        ok = self.model.bounds.contains(end, tol=1e-7)
        return np.where(ok, anchor_cost + seg + iv, np.inf), act

    def _refine(self, V, k_best, vals):
        """Golden-section search on ``[theta_{k-1}, theta_{k+1}]`` per state."""
        n = len(self.X)
        m = len(self.thetas)
        rows = np.arange(n)
        k_lo = k_best - 1
        base = np.where(k_lo >= 0, self.thetas[np.maximum(k_lo, 0)], 0.0)
        anchors = np.where((k_lo >= 0)[:, None], self.states[rows, np.maximum(k_lo, 0)], self.X)
        anchor_cost = np.where(k_lo >= 0, self.costs[rows, np.maximum(k_lo, 0)], 0.0)
        a = base.copy()
        b = self.thetas[np.minimum(k_best + 1, m - 1)]
        c = b - GOLDEN * (b - a)
        d = a + GOLDEN * (b - a)
        fc, _ = self._objective(V, anchors, anchor_cost, base, c)
        fd, _ = self._objective(V, anchors, anchor_cost, base, d)
        for _ in range(self.cfg.golden_iters):
            left = fc <= fd
            # left: minimum in [a, d], old c becomes the new d
            a, b = np.where(left, a, c), np.where(left, d, b)
            c, d = np.where(left, b - GOLDEN * (b - a), d), np.where(left, c, a + GOLDEN * (b - a))
            fc, fd = np.where(left, fc, fd), np.where(left, fc, fd)
            probe = np.where(left, c, d)
            fp, _ = self._objective(V, anchors, anchor_cost, base, probe)
            fc = np.where(left, fp, fc)
            fd = np.where(left, fd, fp)
        theta = 0.5 * (a + b)
        val, act = self._objective(V, anchors, anchor_cost, base, theta)
        return theta, val, act

    def candidates(self, field):
        """All candidate ``(theta, value, action)`` arrays, shape ``(n, k)``, sorted by theta."""
        V = self._cont(field)
        n, m = self.costs.shape
        iv0, a0 = impulse_values(self.model, V, self.X)
        iv0 = np.where(self.start_ok, iv0, np.inf)
        ivs, acts = impulse_values(self.model, V, self.states)
        grid_vals = np.where(self.feasible, self.costs + ivs, np.inf)
        thetas = [np.zeros((n, 1)), np.broadcast_to(self.thetas, (n, m))]
        vals = [iv0[:, None], grid_vals]
        actions = [a0[:, None], acts]
        if self.cfg.refinement > 0:
            k_best = np.argmin(grid_vals, axis=1)
            for _ in range(self.cfg.refinement):
                th, v, a = self._refine(V, k_best, grid_vals)
                thetas.append(th[:, None])
                vals.append(v[:, None])
                actions.append(a[:, None])
        thetas.append(np.full((n, 1), INFINITY))
        vals.append(self.stop[:, None])
        actions.append(np.full((n, 1), self.model.actions[0], dtype=np.int64))
        T = np.concatenate(thetas, axis=1)
        Vv = np.concatenate(vals, axis=1)
        A = np.concatenate(actions, axis=1)
        order = np.argsort(T, axis=1, kind="stable")
        return (np.take_along_axis(T, order, 1), np.take_along_axis(Vv, order, 1),
                np.take_along_axis(A, order, 1))

    def evaluate(self, field):
        """Backed-up values with minimal-wait argmins: ``(values, theta*, a*)``."""
        T, Vv, A = self.candidates(field)
        best = np.min(Vv, axis=1)
        near = Vv <= (best + self.cfg.tie_rel * (1.0 + np.abs(best)))[:, None]
        k = np.argmax(near, axis=1)
        rows = np.arange(len(T))
        return best, T[rows, k], A[rows, k]


def _chunks(n: int, size: int):
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def _parallel(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


class _GridOperator:
    """Chunked backups at every masked node; chunks are independent."""

    def __init__(self, model, flow, grid: Grid, cfg, q, workers=1, embed=None, lift=None,
                 stop_values=None):
        self.grid = grid
        self.workers = workers
        X = grid.nodes()
        if embed is not None:
            X = embed(X)
        self.slices = _chunks(len(X), cfg.chunk)

        def build(sl):
            sv = None if stop_values is None else np.asarray(stop_values)[sl]
            return _Backup(model, flow, X[sl], cfg, q, lift=lift, stop_values=sv)

        self.parts = _parallel(build, self.slices, workers)

    @property
    def stop(self) -> np.ndarray:
        return np.concatenate([p.stop for p in self.parts])

    def apply(self, field: ValueField):
        res = _parallel(lambda p: p.evaluate(field), self.parts, self.workers)
        return tuple(np.concatenate([r[i] for r in res]) for i in range(3))


def bellman_backup(model: ImpulseModel, flow: FlowSpec, V: Callable, x,
                   cfg: Optional[ThetaSearchConfig] = None, q: Optional[QuadratureConfig] = None,
                   lift: Optional[Callable] = None):
    """One backup at a single state: ``(value, theta*, a*)``."""
    cfg = cfg or ThetaSearchConfig()
    b = _Backup(model, flow, as_states(x)[None, :], cfg, q, lift=lift)
    v, t, a = b.evaluate(V)
    return float(v[0]), float(t[0]), int(a[0])


def theta_set(model: ImpulseModel, flow: FlowSpec, V: Callable, x,
              cfg: Optional[ThetaSearchConfig] = None, q: Optional[QuadratureConfig] = None,
              eps: float = 1e-6) -> list:
    """Candidate waits whose backup value is within ``eps`` of the minimum."""
    cfg = cfg or ThetaSearchConfig()
    b = _Backup(model, flow, as_states(x)[None, :], cfg, q)
    T, Vv, _ = b.candidates(V)
    best = np.min(Vv[0])
    return sorted(float(t) for t, v in zip(T[0], Vv[0]) if v <= best + eps)


def value_iteration(model: ImpulseModel, flow: FlowSpec, grid: Grid,
                    cfg: Optional[ThetaSearchConfig] = None, q: Optional[QuadratureConfig] = None,
                    tol: float = 1e-4, max_iter: int = 200, initial=None, workers: int = 1,
                    embed: Optional[Callable] = None, lift: Optional[Callable] = None,
                    monotone_slack: float = 1e-9, operator: Optional[_GridOperator] = None):
    """Successive approximations ``V_{n+1} = B V_n`` from ``V_0 = 0``.

    ``initial`` may be a ValueField, an array of node values, or the string
    ``"stop"`` for the stopping values.  Pointwise increase is checked each
    sweep when starting from zero; a decrease beyond
    ``monotone_slack * (1 + |V_n|)`` warns.  Raises ``NonConvergenceError``
    (carrying the last field) when ``max_iter`` sweeps do not reach ``tol``.
    """
    cfg = cfg or ThetaSearchConfig()
    op = operator or _GridOperator(model, flow, grid, cfg, q, workers, embed, lift)
    check_increase = initial is None
    if initial is None:
        V = ValueField.zeros(grid)
    elif isinstance(initial, str) and initial == "stop":
        V = ValueField(grid, op.stop)
    elif isinstance(initial, ValueField):
        V = initial
    else:
        V = ValueField(grid, initial)
    reports = []
    for n in range(1, max_iter + 1):
        t0 = time.perf_counter()
        new, _, _ = op.apply(V)
        drop = V.values - new
        ok = bool(np.all(drop <= monotone_slack * (1.0 + np.abs(V.values))))
        change = float(np.max(np.abs(new - V.values)))
        V = V.with_values(new, version=n)
        reports.append(IterationReport(n, change, ok, time.perf_counter() - t0))
        if check_increase and not ok:
            warnings.warn(f"sweep {n}: value decreased by {float(drop.max()):.3g}; "
                          "interpolation or quadrature tolerances may be too loose",
                          NonMonotoneIterationWarning, stacklevel=2)
        if change <= tol:
            return V, reports
    raise NonConvergenceError(f"value iteration did not reach tol={tol} in {max_iter} sweeps "
                              f"(last change {reports[-1].sup_change:.3g})",
                              field=V, reports=reports)


class GridStrategy:
    """Stationary strategy read off a converged field.

    Node queries return the stored minimal-wait argmin; any other state gets
    a fresh backup, since the optimal wait jumps across switching lines and
    must not be interpolated.
    """

    def __init__(self, model, flow, field: ValueField, cfg, q, thetas, actions, lift=None):
        self.model = model
        self.flow = flow
        self.field = field
        self.cfg = cfg
        self.q = q
        self.thetas = np.asarray(thetas, dtype=float)
        self.actions = np.asarray(actions, dtype=np.int64)
        self.lift = lift
        self._lookup = {tuple(np.round(x, 12)): i for i, x in enumerate(field.grid.nodes())}
        self._last = (None, None)

    def _resolve(self, x):
        x = as_states(x)
        key = tuple(np.round(x, 12))
        i = self._lookup.get(key)
        if i is not None:
            return float(self.thetas[i]), int(self.actions[i])
        # wait() and act() are queried back to back at the same state
        if self._last[0] == key:
            return self._last[1]
        _, t, a = bellman_backup(self.model, self.flow, self.field, x, self.cfg, self.q, self.lift)
        self._last = (key, (t, a))
        return t, a

    def wait(self, x) -> float:
        return self._resolve(x)[0]

    def act(self, x) -> int:
        return self._resolve(x)[1]


def extract_strategy(model: ImpulseModel, flow: FlowSpec, V: ValueField,
                     cfg: Optional[ThetaSearchConfig] = None, q: Optional[QuadratureConfig] = None,
                     workers: int = 1, operator: Optional[_GridOperator] = None) -> GridStrategy:
    cfg = cfg or ThetaSearchConfig()
    op = operator or _GridOperator(model, flow, V.grid, cfg, q, workers)
    _, thetas, actions = op.apply(V)
    return GridStrategy(model, flow, V, cfg, q, thetas, actions)


def fixed_point_residual(model: ImpulseModel, flow: FlowSpec, V: ValueField,
                         cfg: Optional[ThetaSearchConfig] = None,
                         q: Optional[QuadratureConfig] = None, workers: int = 1,
                         operator: Optional[_GridOperator] = None) -> np.ndarray:
    """``|B V - V|`` at every masked node."""
    cfg = cfg or ThetaSearchConfig()
    op = operator or _GridOperator(model, flow, V.grid, cfg, q, workers)
    new, _, _ = op.apply(V)
    return np.abs(new - V.values)


def make_operator(model, flow, grid, cfg=None, q=None, workers=1, embed=None, lift=None):
    """Precomputed grid backup, reusable across solves and residual checks."""
    return _GridOperator(model, flow, grid, cfg or ThetaSearchConfig(), q, workers, embed, lift)
