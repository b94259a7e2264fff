"""Deterministic flows between impulses and integrals of the running cost.

Two flow kinds are supported.  A closed-form flow evaluates ``phi(x, t)``
directly from a vectorized formula.  An ODE-field flow integrates
``x' = f(x)`` with fixed-step RK4; every element of a batch uses
``ceil(t / step)`` equal steps, so results do not depend on what else is in
the batch and repeated runs are bit-identical.

Running-cost integrals over a single finite interval use adaptive QUADPACK
quadrature (closed-form flows) or the RK4 integrator on the cost-augmented
system (ODE flows).  Batched tables for value iteration use fixed
Gauss-Legendre panels, which are checked against the adaptive route in the
test suite.  Integrals to infinity are truncated at a horizon and closed
with an exponential tail estimate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .core import Bounds, as_states
from .errors import BlowUpError, DomainError, QuadratureError, TailNotNegligibleError

CLOSED_FORM = "closed-form"
ODE_FIELD = "ode-field"


@dataclass(frozen=True)
class QuadratureConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_subdivisions: int = 200
    horizon: Optional[float] = None  # T_max for infinite integrals; None -> flow default
    tail_bound_check: bool = True
    gauss_points: int = 8
    max_horizon_doublings: int = 8

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("quadrature tolerances must be > 0")
        if self.horizon is not None and self.horizon <= 0:
            raise ValueError("horizon must be > 0")
        if self.max_subdivisions < 1 or self.gauss_points < 1:
            raise ValueError("max_subdivisions and gauss_points must be >= 1")


DEFAULT_QUADRATURE = QuadratureConfig()


@dataclass(frozen=True)
class FlowSpec:
    """The semigroup ``phi(x, t)``; build with :meth:`closed_form` or :meth:`ode`."""

    kind: str
    advance_fn: Optional[Callable] = None
    field: Optional[Callable] = None
    step: float = 1e-3
    bounds: Optional[Bounds] = None
    default_horizon: float = 80.0

    def __post_init__(self):
        if self.kind == CLOSED_FORM:
            if self.advance_fn is None:
                raise ValueError("closed-form flow needs advance_fn")
        elif self.kind == ODE_FIELD:
            if self.field is None:
                raise ValueError("ode-field flow needs field")
            if not self.step > 0:
                raise ValueError("integrator step must be > 0")
        else:
            raise ValueError(f"unknown flow kind {self.kind!r}")
        if not self.default_horizon > 0:
            raise ValueError("default_horizon must be > 0")

    @classmethod
    def closed_form(cls, advance_fn, bounds=None, default_horizon=80.0):
        return cls(CLOSED_FORM, advance_fn=advance_fn, bounds=bounds,
                   default_horizon=default_horizon)

    @classmethod
    def ode(cls, field, step=1e-3, bounds=None, default_horizon=80.0):
        return cls(ODE_FIELD, field=field, step=step, bounds=bounds,
                   default_horizon=default_horizon)


def horizon_for(flow: FlowSpec, q: Optional[QuadratureConfig]) -> float:
    if q is not None and q.horizon is not None:
        return float(q.horizon)
    return float(flow.default_horizon)


def _times(x: np.ndarray, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t)):
        raise DomainError("advance needs a finite time")
    if np.any(t < 0):
        raise DomainError("negative times are not supported; flows run forward only")
    return np.broadcast_to(t, np.broadcast_shapes(t.shape, x.shape[:-1]))


def _step_counts(flow: FlowSpec, t: np.ndarray) -> np.ndarray:
    n = np.ceil(t / flow.step * (1.0 - 1e-12)).astype(np.int64)
    return np.where(t > 0, np.maximum(n, 1), 0)


def _rk4(rhs, y, dt):
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * dt * k1)
    k3 = rhs(y + 0.5 * dt * k2)
    k4 = rhs(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _integrate_ode(flow: FlowSpec, x: np.ndarray, t: np.ndarray, rate=None):
    """RK4 from ``x`` over per-element times ``t``; optionally accumulates ``rate``."""
    shape = t.shape
    d = x.shape[-1]
    y = np.broadcast_to(x, shape + (d,)).reshape(-1, d)
    tt = t.reshape(-1)
    n = _step_counts(flow, tt)
    dt = np.where(n > 0, tt / np.maximum(n, 1), 0.0)[:, None]
    if rate is None:
        state = y.copy()

        def rhs(s):
            return np.asarray(flow.field(s), dtype=float)
    else:
        state = np.concatenate([y, np.zeros((len(y), 1))], axis=1)

        def rhs(s):
            return np.concatenate([np.asarray(flow.field(s[:, :d]), dtype=float),
                                   np.asarray(rate(s[:, :d]), dtype=float)[:, None]], axis=1)

    for k in range(int(n.max(initial=0))):
        active = k < n
        if active.all():
            state = _rk4(rhs, state, dt)
        else:
            state[active] = _rk4(rhs, state[active], dt[active])
        if not np.all(np.isfinite(state[active])):
            raise BlowUpError("ODE trajectory became non-finite")
    end = state[:, :d].reshape(shape + (d,))
    if rate is None:
        return end, None
    return end, state[:, d].reshape(shape)


def _check_box(flow: FlowSpec, y: np.ndarray) -> None:
    if flow.bounds is not None and not np.all(flow.bounds.contains(y, tol=1e-7)):
        raise BlowUpError("trajectory left the flow's bounding box")


def advance(flow: FlowSpec, x, t) -> np.ndarray:
    """``phi(x, t)`` for a state or a batch; ``t`` broadcasts over the batch."""
    x = as_states(x)
    t = _times(x, t)
    if flow.kind == CLOSED_FORM:
        xb = np.broadcast_to(x, t.shape + x.shape[-1:])
        y = np.asarray(flow.advance_fn(xb, t), dtype=float)
        y = np.where((t == 0)[..., None], xb, y)
    else:
        y, _ = _integrate_ode(flow, x, t)
    _check_box(flow, y)
    return y


def _gauss(points: int):
    nodes, weights = np.polynomial.legendre.leggauss(points)
    return (nodes + 1.0) / 2.0, weights / 2.0


def integrate_segments(flow: FlowSpec, rate, x, dt, gauss_points: int = 8,
                       panels: int = 1):
    """End states and running-cost integrals over ``[0, dt]`` for a batch.

    Closed-form flows use ``panels`` equal Gauss-Legendre panels; ODE flows
    integrate the cost-augmented system with the flow's own RK4 step.
    Returns ``(phi(x, dt), integral)``.
    """
    x = as_states(x)
    dt = _times(x, dt)
    if flow.kind == ODE_FIELD:
        end, cost = _integrate_ode(flow, x, dt, rate)
        _check_box(flow, end)
        return end, cost
    xb = np.broadcast_to(x, dt.shape + x.shape[-1:])
    g_nodes, g_weights = _gauss(gauss_points)
    offs = (np.arange(panels)[:, None] + g_nodes[None, :]).reshape(-1) / panels
    w = np.tile(g_weights, panels) / panels
    u = dt[..., None] * offs
    states = advance(flow, xb[..., None, :], u)
    vals = np.asarray(rate(states), dtype=float)
    cost = dt * np.sum(vals * w, axis=-1)
    return advance(flow, xb, dt), cost


def cost_table(flow: FlowSpec, rate, X, thetas, gauss_points: int = 8):
    """States ``phi(x, theta_k)`` and cumulative costs ``int_0^theta_k``.

    ``thetas`` must be strictly increasing and positive.  Returns arrays of
    shape ``(n, m, d)`` and ``(n, m)``.
    """
    X = as_states(X)
    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim != 1 or np.any(thetas <= 0) or np.any(np.diff(thetas) <= 0):
        raise ValueError("thetas must be positive and strictly increasing")
    n, d = X.shape
    m = len(thetas)
    starts = np.concatenate([[0.0], thetas[:-1]])
    dts = thetas - starts
    if flow.kind == CLOSED_FORM:
        states = advance(flow, X[:, None, :], np.broadcast_to(thetas, (n, m)))
        anchors = np.concatenate([X[:, None, :], states[:, :-1, :]], axis=1)
        _, seg = integrate_segments(flow, rate, anchors, np.broadcast_to(dts, (n, m)),
                                    gauss_points)
    else:
        states = np.empty((n, m, d))
        seg = np.empty((n, m))
        cur = X
        for k in range(m):
            cur, seg[:, k] = integrate_segments(flow, rate, cur, np.full(n, dts[k]))
            states[:, k] = cur
    return states, np.cumsum(seg, axis=1)


def _tail_estimate(g_a, g_b, gap):
    """Exponential-decay estimate of ``int_{t+gap}^inf`` from two integrand samples."""
    g_a = np.abs(np.asarray(g_a, dtype=float))
    g_b = np.abs(np.asarray(g_b, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.log(g_a / g_b) / gap
        tail = np.where(g_b == 0, 0.0, np.where(lam > 0, g_b / lam, np.inf))
    return tail


def extend_to_infinity(flow: FlowSpec, rate, X_T, R_T, T, q: Optional[QuadratureConfig] = None,
                       panels: int = 16):
    """Close running-cost integrals known up to ``T`` out to infinity.

    A probe segment of length ``T/10`` past the horizon gives an exponential
    tail estimate; where it exceeds ``abs_tol`` the horizon is doubled, at
    most ``max_horizon_doublings`` times.  Returns ``(totals, tails)``.
    """
    q = q or DEFAULT_QUADRATURE
    X = as_states(X_T).copy()
    R = np.array(R_T, dtype=float, copy=True).reshape(X.shape[:-1])
    tails = np.full(R.shape, np.inf)
    todo = np.ones(R.shape, dtype=bool)
    t_now = float(T)
    for k in range(q.max_horizon_doublings + 1):
        gap = t_now / 10.0 if k == 0 else t_now
        Xk = X[todo]
        end, seg = integrate_segments(flow, rate, Xk, np.full(len(Xk), gap),
                                      q.gauss_points, panels)
        tail = _tail_estimate(rate(Xk), rate(end), gap)
        R[todo] += seg
        X[todo] = end
        tails[todo] = tail
        t_now += gap
        todo[todo] = tail > q.abs_tol
        if not todo.any():
            break
    if todo.any() and q.tail_bound_check:
        raise TailNotNegligibleError(
            f"{int(todo.sum())} running-cost tails exceed abs_tol={q.abs_tol} at "
            f"horizon {t_now:g}; the cost may not be integrable along the flow")
    return R + np.where(np.isfinite(tails), tails, 0.0), tails


def _quad(fun, a, b, q: QuadratureConfig) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = integrate.quad(fun, a, b, epsabs=q.abs_tol, epsrel=q.rel_tol,
                             limit=q.max_subdivisions, full_output=1)
    if len(res) > 3:
        val, err = res[0], res[1]
        if not err <= 10 * max(q.abs_tol, q.rel_tol * abs(val)):
            raise QuadratureError(f"running-cost quadrature failed: {res[3]}")
    return float(res[0])


def _rate_of(model) -> Callable:
    return model.gradual_cost


def running_cost(flow: FlowSpec, model, x, theta, q: Optional[QuadratureConfig] = None) -> float:
    """``int_(0, theta] C^g(phi(x, u)) du`` for one state and finite ``theta``."""
    q = q or DEFAULT_QUADRATURE
    x = as_states(x)
    theta = float(theta)
    if not math.isfinite(theta) or theta < 0:
        raise DomainError("running_cost needs a finite theta >= 0")
    if theta == 0.0:
        return 0.0
    rate = _rate_of(model)
    if flow.kind == ODE_FIELD:
        _, cost = integrate_segments(flow, rate, x, theta)
        return float(cost)

    def integrand(u):
        return float(rate(advance(flow, x, u)))

    return _quad(integrand, 0.0, theta, q)


def stopping_value(flow: FlowSpec, model, x, q: Optional[QuadratureConfig] = None) -> float:
    """Cost of never intervening: ``int_(0, inf) C^g(phi(x, u)) du``."""
    q = q or DEFAULT_QUADRATURE
    x = as_states(x)
    if bool(np.all(model.in_cemetery(x))):
        return 0.0
    T = horizon_for(flow, q)
    head = running_cost(flow, model, x, T, q)
    total, _ = extend_to_infinity(flow, _rate_of(model), advance(flow, x, T)[None, :],
                                  np.array([head]), T, q)
    return float(total[0])


def stopping_values(flow: FlowSpec, model, X, q: Optional[QuadratureConfig] = None,
                    rate=None, panels_per_unit: float = 2.0) -> np.ndarray:
    """Batched stopping values via Gauss-Legendre panels plus the tail closure."""
    q = q or DEFAULT_QUADRATURE
    X = as_states(X)
    if X.ndim == 1:
        X = X[None, :]
    rate = rate or _rate_of(model)
    T = horizon_for(flow, q)
    panels = max(8, int(math.ceil(T * panels_per_unit)))
    end, head = integrate_segments(flow, rate, X, np.full(len(X), T), q.gauss_points, panels)
    total, _ = extend_to_infinity(flow, rate, end, head, T, q)
    if model.cemetery is not None:
        total = np.where(model.in_cemetery(X), 0.0, total)
    return total


def check_uniform_bound(flow: FlowSpec, model, sample_states, q: Optional[QuadratureConfig] = None):
    """Sampled estimate of ``K = sup_x int |C^g(phi(x, u))| du``.

    Returns ``(finite, K_hat)``; a non-negligible tail reports ``(False, inf)``.
    """
    X = as_states(sample_states)
    if X.ndim == 1:
        X = X[None, :]
    if len(X) == 0:
        raise ValueError("sample_states must be nonempty")

    def abs_rate(s):
        return np.abs(model.gradual_cost(s))

    try:
        vals = stopping_values(flow, model, X, q, rate=abs_rate)
    except TailNotNegligibleError:
        return False, math.inf
    k_hat = float(np.max(vals))
    return bool(math.isfinite(k_hat)), k_hat
