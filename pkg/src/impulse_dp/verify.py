"""Checks of the differential optimality form and related identities.

A candidate value function ``V`` is tested pointwise:

* off the intervention set (positive impulse gap) the forward generator
  ``lim [V(phi(x, h)) - V(x)]/h + (1/h) int_0^h C^g`` must vanish (case A);
* on it (zero gap) the backward generator, taken along the trajectory that
  arrives at ``x``, must be non-negative (case B).

Generators are finite differences over ``h, h/2, h/4`` with Richardson
extrapolation.  The backward generator never reverses the flow: the
predecessor ``z`` with ``phi(z, h) = x`` is found by a Newton solve on the
forward map, and points without a predecessor are reported as singular.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np
from scipy import ndimage

from .bellman import Grid, ThetaSearchConfig, ValueField, impulse_values, theta_set
from .core import INFINITY, ImpulseModel, as_states
from .errors import DomainError
from .flow import (DEFAULT_QUADRATURE, FlowSpec, QuadratureConfig, advance, cost_table,
                   horizon_for, integrate_segments, running_cost)

CASE_A = "A"
CASE_B = "B"
VIOLATION = "VIOLATION"


@dataclass(frozen=True)
class GeneratorEstimate:
    """``forward``/``backward`` are ``None`` when no limit could be established."""

    forward: Optional[float]
    backward: Optional[float]
    h: float


@dataclass(frozen=True)
class DifEqVerdict:
    case: str
    forward_residual: float
    impulse_gap: float
    location: tuple
    backward: float = math.nan


@dataclass(frozen=True)
class DifEqMargins:
    forward: float = 1e-3
    gap: float = 1e-6
    backward: float = 1e-3
    exclusion_cells: int = 2
    gen_tol: float = 1e-3
    h: float = 1e-3


def _richardson(D1, D2, D3, gen_tol):
    r1 = 2.0 * D2 - D1
    r2 = 2.0 * D3 - D2
    stable = np.isfinite(r1) & np.isfinite(r2) & (np.abs(r2 - r1) <= gen_tol)
    return np.where(stable, r2, np.nan), stable


def _cell_steps(V, flow, X, cells):
    """Per-state times for which the flow moves about ``cells`` grid cells."""
    probe = np.full(len(X), 1e-3)
    speed = np.linalg.norm(advance(flow, X, probe) - X, axis=-1) / probe
    cell = float(np.min(V.grid.spacing))
    return np.where(speed > 0, cells * cell / np.maximum(speed, 1e-300), probe)


def _quotients(V, flow, model, X, hs):
    v0 = np.asarray(V(X), dtype=float)
    D = []
    for k in range(3):
        t = hs / 2 ** k
        Y, R = integrate_segments(flow, model.gradual_cost, X, t)
        D.append((np.asarray(V(Y), dtype=float) - v0) / t + R / t)
    return D


def _grid_generators(V, flow, model, X, gen_tol):
    """Generator of a multilinear grid field along the flow.

    A one-sided quotient of a piecewise-multilinear field carries an O(cell)
    bias, so the estimate uses the centered stencil through the predecessor
    and successor one cell away.  States whose predecessor lies outside X
    fall back to a one-sided quadratic fit over a few cells.
    """
    hs = _cell_steps(V, flow, X, 1.0)
    Z, ok = predecessors(flow, X, hs)
    ok &= model.bounds.contains(Z, tol=1e-9)
    C = []
    for k in range(3):
        t = hs / 2 ** k
        Zk, okk = predecessors(flow, X, t) if k else (Z, ok)
        ok &= okk & model.bounds.contains(Zk, tol=1e-9)
        Zk = np.where(ok[:, None], Zk, X)
        Y, R1 = integrate_segments(flow, model.gradual_cost, X, t)
        _, R0 = integrate_segments(flow, model.gradual_cost, Zk, t)
        C.append((np.asarray(V(Y), dtype=float) - np.asarray(V(Zk), dtype=float) + R0 + R1)
                 / (2.0 * t))
    stable = np.all(np.abs(np.diff(np.stack(C), axis=0)) <= gen_tol, axis=0)
    est = np.where(stable, C[-1], np.nan)
    if not ok.all():
        est[~ok] = _one_sided_fit(V, flow, model, X[~ok], gen_tol)
    return est, hs


def _slope_fit(T, G):
    """Least-squares ``a`` in ``G ~ a t + b t^2`` per row."""
    s2, s3, s4 = (np.sum(T ** k, axis=1) for k in (2, 3, 4))
    g1, g2 = np.sum(T * G, axis=1), np.sum(T ** 2 * G, axis=1)
    return (g1 * s4 - g2 * s3) / (s2 * s4 - s3 ** 2)


def _one_sided_fit(V, flow, model, X, gen_tol, samples=8, span=4.0):
    """Slope at ``t = 0`` of a quadratic fitted to ``V(phi(x,t)) + int_0^t C^g``.

    Samples reach ``span`` cells downstream; the fit over the first half of
    them must agree with the full fit to ``gen_tol``.
    """
    unit = _cell_steps(V, flow, X, 1.0)
    T = unit[:, None] * (np.arange(1, samples + 1) * span / samples)[None, :]
    v0 = np.asarray(V(X), dtype=float)
    G = np.empty_like(T)
    for j in range(samples):
        Y, R = integrate_segments(flow, model.gradual_cost, X, T[:, j])
        G[:, j] = np.asarray(V(Y), dtype=float) + R - v0
    full = _slope_fit(T, G)
    half = _slope_fit(T[:, :samples // 2], G[:, :samples // 2])
    return np.where(np.abs(full - half) <= gen_tol, full, np.nan)


def forward_generators(V: Callable, flow: FlowSpec, model: ImpulseModel, X, h=1e-3,
                       gen_tol: float = 1e-3):
    """Vectorized forward generator; ``nan`` where the limit is not established.

    Returns ``(estimates, steps)``.  Grid fields are handled by
    :func:`_grid_generators`.
    """
    X = as_states(X).reshape(-1, model.dim)
    if isinstance(V, ValueField):
        return _grid_generators(V, flow, model, X, gen_tol)
    hs = np.full(len(X), float(h))
    est, _ = _richardson(*_quotients(V, flow, model, X, hs), gen_tol)
    return est, hs


def _advance_rows(flow, Z, s):
    """``advance`` that marks rows outside the flow's domain as ``nan`` instead of raising."""
    try:
        return advance(flow, Z, s)
    except DomainError:
        if len(Z) == 1:
            return np.full(Z.shape, np.nan)
        k = len(Z) // 2
        return np.concatenate([_advance_rows(flow, Z[:k], s[:k]),
                               _advance_rows(flow, Z[k:], s[k:])])


def predecessors(flow: FlowSpec, X, s, iters: int = 12, tol: float = 1e-11):
    """Solve ``phi(z, s) = x`` for ``z`` by damped Newton on the forward map.

    Returns ``(Z, ok)``; ``ok`` is False where no solution was found, which
    covers the singular points of a non-invertible flow.  Steps that leave
    the flow's domain are halved.
    """
    X = as_states(X)
    X = X.reshape(-1, X.shape[-1])
    n, d = X.shape
    s = np.broadcast_to(np.asarray(s, dtype=float), (n,))
    scale = tol * (1.0 + np.max(np.abs(X), axis=-1))
    Z = 2.0 * X - advance(flow, X, s)
    F = _advance_rows(flow, Z, s) - X
    bad = ~np.all(np.isfinite(F), axis=-1)
    Z[bad] = X[bad]
    F[bad] = advance(flow, X[bad], s[bad]) - X[bad]
    for _ in range(iters):
        res = np.max(np.abs(F), axis=-1)
        todo = res > scale
        if not todo.any():
            break
        idx = np.flatnonzero(todo)
        Zt, Ft, st = Z[idx], F[idx], s[idx]
        eps = 1e-7 * (1.0 + np.abs(Zt))
        sign = np.where(Zt - eps >= 0, -1.0, 1.0)
        J = np.empty((len(idx), d, d))
        for j in range(d):
            Zp = Zt.copy()
            Zp[:, j] += sign[:, j] * eps[:, j]
            J[:, :, j] = (_advance_rows(flow, Zp, st) - X[idx] - Ft) / (sign[:, j:j + 1] * eps[:, j:j + 1])
        good = np.all(np.isfinite(J), axis=(1, 2))
        step = np.zeros((len(idx), d))
        try:
            step[good] = np.linalg.solve(J[good], Ft[good][..., None])[..., 0]
        except np.linalg.LinAlgError:
            step[good] = (np.linalg.pinv(J[good]) @ Ft[good][..., None])[..., 0]
        lam = np.ones(len(idx))
        pending = np.ones(len(idx), dtype=bool)
        for _ in range(30):
            cand = Zt[pending] - lam[pending, None] * step[pending]
            Fc = _advance_rows(flow, cand, st[pending]) - X[idx[pending]]
            okc = np.all(np.isfinite(Fc), axis=-1)
            rows = np.flatnonzero(pending)[okc]
            Z[idx[rows]] = cand[okc]
            F[idx[rows]] = Fc[okc]
            pending[rows] = False
            lam[pending] *= 0.5
            if not pending.any():
                break
    res = np.max(np.abs(F), axis=-1)
    return Z, np.isfinite(res) & (res <= 1e3 * scale)


def backward_generators(V: Callable, flow: FlowSpec, model: ImpulseModel, X, h=1e-3,
                        gen_tol: float = 1e-3):
    """Backward generator along the incoming trajectory.

    Uses the Richardson limit when it is stable and the smallest raw quotient
    (a lim inf proxy) otherwise; ``nan`` marks singular points.
    """
    X = as_states(X).reshape(-1, model.dim)
    hs = _cell_steps(V, flow, X, 1.0) if isinstance(V, ValueField) else np.full(len(X), float(h))
    Z, ok = predecessors(flow, X, hs)
    v0 = np.asarray(V(X), dtype=float)
    D = []
    for k in range(3):
        t = hs / 2 ** k
        Zs = np.where(ok[:, None], Z, X)
        Y = advance(flow, Zs, hs - t)
        _, R = integrate_segments(flow, model.gradual_cost, Y, t)
        D.append((v0 - np.asarray(V(Y), dtype=float)) / t + R / t)
    est, stable = _richardson(*D, gen_tol)
    raw = np.min(np.stack(D), axis=0)
    out = np.where(stable, est, raw)
    return np.where(ok, out, np.nan), hs


def forward_generator(V: Callable, flow: FlowSpec, model: ImpulseModel, x, h=1e-3,
                      gen_tol: float = 1e-3, backward: bool = False) -> GeneratorEstimate:
    x = as_states(x)[None, :]
    f, hs = forward_generators(V, flow, model, x, h, gen_tol)
    b = None
    if backward:
        bv, _ = backward_generators(V, flow, model, x, h, gen_tol)
        b = None if np.isnan(bv[0]) else float(bv[0])
    return GeneratorEstimate(None if np.isnan(f[0]) else float(f[0]), b, float(hs[0]))


def impulse_gaps(model: ImpulseModel, V: Callable, X) -> np.ndarray:
    """``min_a [C^I(x, a) + V(l(x, a))] - V(x)``."""
    X = as_states(X)
    iv, _ = impulse_values(model, V, X)
    return iv - np.asarray(V(X), dtype=float)


def intervention_set(model: ImpulseModel, V: Callable, grid: Grid, margin: float = 1e-6):
    """Lattice mask of nodes with impulse gap ``<= margin`` (False outside X)."""
    out = np.zeros(grid.counts, dtype=bool)
    out[grid.mask] = impulse_gaps(model, V, grid.nodes()) <= margin
    return out


def exclusion_band(grid: Grid, L_mask: np.ndarray, cells: int) -> np.ndarray:
    """Nodes within ``cells`` (chessboard distance) of the other side of the 𝓛 boundary."""
    if cells <= 0:
        return np.zeros(grid.counts, dtype=bool)
    inside = L_mask & grid.mask
    outside = ~L_mask & grid.mask
    band = np.zeros(grid.counts, dtype=bool)
    if outside.any():
        band |= inside & (ndimage.distance_transform_cdt(~outside, metric="chessboard") <= cells)
    if inside.any():
        band |= outside & (ndimage.distance_transform_cdt(~inside, metric="chessboard") <= cells)
    return band


def classify_points(model: ImpulseModel, flow: FlowSpec, V: Callable, X,
                    margins: DifEqMargins = DifEqMargins()) -> list:
    """Case A / case B / VIOLATION verdict for each state."""
    X = as_states(X).reshape(-1, model.dim)
    gaps = impulse_gaps(model, V, X)
    fwd, _ = forward_generators(V, flow, model, X, margins.h, margins.gen_tol)
    on_L = np.abs(gaps) <= margins.gap
    bwd = np.full(len(X), np.nan)
    if on_L.any():
        bwd[on_L], _ = backward_generators(V, flow, model, X[on_L], margins.h, margins.gen_tol)
    out = []
    for i, x in enumerate(X):
        g = float(gaps[i])
        f = float(fwd[i])
        if g > margins.gap:
            case = CASE_A if abs(f) <= margins.forward else VIOLATION
        elif on_L[i]:
            b = bwd[i]
            # no incoming trajectory: the backward condition is vacuous
            case = CASE_B if (np.isnan(b) or b >= -margins.backward) else VIOLATION
        else:
            case = VIOLATION
        out.append(DifEqVerdict(case, f, g, tuple(float(v) for v in x), float(bwd[i])))
    return out


def check_differential_form(model: ImpulseModel, flow: FlowSpec, V: Callable, grid: Grid,
                            margins: DifEqMargins = DifEqMargins(),
                            exclude: Optional[np.ndarray] = None) -> list:
    """Verdicts at every grid node outside the exclusion band of the 𝓛 boundary.

    ``exclude`` overrides the detected band with an explicit lattice mask.
    """
    if exclude is None:
        exclude = exclusion_band(grid, intervention_set(model, V, grid, margins.gap),
                                 margins.exclusion_cells)
    keep = grid.mask & ~exclude
    X = grid.all_nodes()[keep]
    return classify_points(model, flow, V, X, margins)


def violations(verdicts) -> list:
    return [v for v in verdicts if v.case == VIOLATION]


def summarize(verdicts) -> dict:
    counts = {CASE_A: 0, CASE_B: 0, VIOLATION: 0}
    for v in verdicts:
        counts[v.case] += 1
    a_res = [abs(v.forward_residual) for v in verdicts if v.case != CASE_B
             and math.isfinite(v.forward_residual)]
    b_gap = [abs(v.impulse_gap) for v in verdicts if v.case == CASE_B]
    return {"counts": counts, "checked": len(verdicts),
            "worst_forward_residual_off_L": max(a_res, default=0.0),
            "worst_impulse_gap_on_L": max(b_gap, default=0.0),
            "min_backward_on_L": min((v.backward for v in verdicts
                                      if v.case == CASE_B and math.isfinite(v.backward)),
                                     default=None)}


def write_verdicts(path, verdicts) -> None:
    d = len(verdicts[0].location) if verdicts else 2
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(d)] + ["case", "forward_residual", "impulse_gap"])
        for v in verdicts:
            w.writerow([format(c, ".17g") for c in v.location]
                       + [v.case, format(v.forward_residual, ".17g"), format(v.impulse_gap, ".17g")])


def write_summary(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)


def check_no_impulse_identity(model: ImpulseModel, flow: FlowSpec, V: Callable, x, t,
                              q: Optional[QuadratureConfig] = None) -> float:
    """``|V(x) - int_0^t C^g - V(phi(x, t))|`` for a trajectory that stays off 𝓛."""
    x = as_states(x)
    if t == 0:
        return 0.0
    run = running_cost(flow, model, x, t, q)
    y = advance(flow, x, t)
    return abs(float(V(x[None, :])[0]) - run - float(V(y[None, :])[0]))


def h_profile(model: ImpulseModel, flow: FlowSpec, V: Callable, x, t, samples: int = 64,
              q: Optional[QuadratureConfig] = None):
    """``(s, h(s))`` with ``h(s) = V(phi(x,s)) - int_s^t C^g - I{t<inf} IV(phi(x,t))``."""
    x = as_states(x)
    if t == INFINITY:
        t_end = horizon_for(flow, q)
        tail = 0.0
    else:
        t_end = float(t)
        iv, _ = impulse_values(model, V, advance(flow, x, t_end)[None, :])
        tail = float(iv[0])
    s = np.linspace(0.0, t_end, samples)
    states, cum = cost_table(flow, model.gradual_cost, x[None, :], s[1:])
    states = np.concatenate([x[None, :], states[0]])
    cum = np.concatenate([[0.0], cum[0]])
    h = np.asarray(V(states), dtype=float) - (cum[-1] - cum) - tail
    return s, h


def check_h_monotone(model: ImpulseModel, flow: FlowSpec, V: Callable, x, t,
                     samples: int = 64, mono_tol: float = 1e-7,
                     q: Optional[QuadratureConfig] = None) -> bool:
    """True iff the h-profile along ``[0, t]`` is nondecreasing up to ``mono_tol``."""
    _, h = h_profile(model, flow, V, x, t, samples, q)
    return bool(np.all(np.diff(h) >= -mono_tol))


@dataclass
class ConditionsReport:
    c8_passed: int = 0
    c8_total: int = 0
    c9_passed: int = 0
    c9_total: int = 0
    c7_passed: int = 0
    c7_total: int = 0
    c6_passed: int = 0
    c6_total: int = 0

    @property
    def ok(self) -> bool:
        return (self.c8_passed == self.c8_total and self.c9_passed == self.c9_total
                and self.c7_passed == self.c7_total and self.c6_passed == self.c6_total)

    def as_dict(self) -> dict:
        return {**asdict(self), "ok": self.ok}


def check_conditions(model: ImpulseModel, flow: FlowSpec, V: Callable, starts=None,
                     times=None, n_traj: int = 20, seed: int = 0, delta: float = 1e-6,
                     cont_tol: float = 1e-4, gap_margin: float = 1e-6, n_theta: int = 3,
                     cfg: Optional[ThetaSearchConfig] = None,
                     q: Optional[QuadratureConfig] = None) -> ConditionsReport:
    """Sampled checks of semicontinuity along the flow and attainment of infima.

    C8: ``V(phi(x,s)) <= V(phi(x,s+delta)) + tol`` and
    ``V(phi(x,s)) >= V(phi(x,s-delta)) - tol``.  C9: left continuity at
    samples off 𝓛.  C7: where the trajectory enters 𝓛, the gap just
    before the entry time is within ``cont_tol`` of zero.  C6: the set of
    optimal waits at a few states is nonempty and its smallest element is
    optimal.
    """
    rng = np.random.default_rng(seed)
    starts = model.bounds.sample(n_traj, rng) if starts is None else as_states(starts)
    starts = starts.reshape(-1, model.dim)
    T = horizon_for(flow, q)
    times = np.linspace(delta, min(T, 20.0), 41) if times is None else np.asarray(times, float)
    rep = ConditionsReport()

    def Vof(Y):
        return np.asarray(V(Y), dtype=float)

    for x in starts:
        Y = advance(flow, x, times)
        Yp = advance(flow, x, times + delta)
        Ym = advance(flow, x, np.maximum(times - delta, 0.0))
        v, vp, vm = Vof(Y), Vof(Yp), Vof(Ym)
        c8 = (v <= vp + cont_tol) & (v >= vm - cont_tol)
        rep.c8_total += len(times)
        rep.c8_passed += int(c8.sum())
        gaps = impulse_gaps(model, V, Y)
        off = gaps > gap_margin
        rep.c9_total += int(off.sum())
        rep.c9_passed += int((np.abs(v - vm) <= cont_tol)[off].sum())
        inside = np.flatnonzero(~off)
        if len(inside):
            rep.c7_total += 1
            k = inside[0]
            if k == 0:
                rep.c7_passed += 1
            else:
                lo, hi = times[k - 1], times[k]
                for _ in range(50):
                    mid = 0.5 * (lo + hi)
                    g = impulse_gaps(model, V, advance(flow, x, mid)[None, :])[0]
                    lo, hi = (lo, mid) if g <= gap_margin else (mid, hi)
                g_lo = impulse_gaps(model, V, advance(flow, x, lo)[None, :])[0]
                rep.c7_passed += int(g_lo <= gap_margin + cont_tol)
    for x in starts[:n_theta]:
        ts = theta_set(model, flow, V, x, cfg, q, eps=cont_tol)
        rep.c6_total += 1
        rep.c6_passed += int(len(ts) > 0)
    return rep
