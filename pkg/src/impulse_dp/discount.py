"""Discounted problems as total-cost problems on a time-augmented state.

A base model on ``Y`` with discount rate ``alpha`` becomes a model on
``Y x [0, inf)`` whose costs carry the factor ``exp(-alpha s)`` and whose
flow advances ``s`` at unit speed.  Because ``V((y, s)) = exp(-alpha s) V_Y(y)``
the time axis is never gridded: only the slice ``s = 0`` is solved, with
continuation values lifted analytically.
"""

from __future__ import annotations

import math
import warnings
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize

from .bellman import Grid, ThetaSearchConfig, ValueField, make_operator, value_iteration
from .core import Bounds, CemeterySpec, ImpulseModel, as_states
from .errors import ModelValidationWarning, NonConvergenceError
from .flow import (CLOSED_FORM, DEFAULT_QUADRATURE, FlowSpec, QuadratureConfig, advance,
                   horizon_for)
from .verify import GeneratorEstimate, forward_generator


def _augment_bounds(b: Bounds) -> Bounds:
    A = b.constraint_matrix
    if A is not None:
        A = tuple(tuple(row) + (0.0,) for row in A)
    return Bounds(tuple(b.lower) + (0.0,), tuple(b.upper) + (math.inf,), A, b.constraint_rhs)


def _split(X):
    X = as_states(X)
    return X[..., :-1], X[..., -1]


def wrap_discounted(base: ImpulseModel, base_flow: FlowSpec, alpha: float,
                    weight: str = "exponential", samples: int = 256, seed: int = 0):
    """``(model, flow)`` on ``Y x [0, inf)`` for the ``alpha``-discounted base problem.

    Only exponential weights are supported.  A sampled running cost that is
    not finite triggers a ``ModelValidationWarning``, since the wrap then
    need not have an integrable cost along the flow.
    """
    if weight != "exponential":
        raise ValueError(f"only exponential discounting is supported, got {weight!r}")
    if not (math.isfinite(alpha) and alpha > 0):
        raise ValueError("alpha must be a positive finite number")
    return _wrap(base, base_flow, float(alpha), samples, seed)


def _wrap(base, base_flow, alpha, samples=256, seed=0):
    try:
        Ys = base.bounds.sample(samples, np.random.default_rng(seed))
        cg = np.abs(np.asarray(base.gradual_cost(Ys), dtype=float))
        bounded = bool(np.all(np.isfinite(cg)))
    except (ValueError, OverflowError):
        bounded = False
    if not bounded:
        warnings.warn(f"{base.name}: running cost looks unbounded; the discounted wrap may "
                      "violate the integrability assumption", ModelValidationWarning, stacklevel=3)

    def gradual(X):
        y, s = _split(X)
        return np.exp(-alpha * s) * np.asarray(base.gradual_cost(y), dtype=float)

    def impulse(X, a):
        y, s = _split(X)
        return np.exp(-alpha * s) * np.asarray(base.impulse_cost(y, a), dtype=float)

    def jump(X, a):
        y, s = _split(X)
        return np.concatenate([np.asarray(base.jump(y, a), dtype=float), s[..., None]], axis=-1)

    cemetery = None
    if base.cemetery is not None:
        cemetery = CemeterySpec(lambda X: base.cemetery.contains(_split(X)[0]), base.cemetery.tol)
    model = ImpulseModel(gradual_cost=gradual, impulse_cost=impulse, jump=jump,
                         actions=base.actions, bounds=_augment_bounds(base.bounds),
                         impulse_cost_floor=None, cemetery=cemetery,
                         name=f"{base.name}-discounted",
                         params={**base.params, "alpha": alpha})
    horizon = base_flow.default_horizon if alpha == 0 else min(base_flow.default_horizon,
                                                                50.0 / alpha)
    if base_flow.kind == CLOSED_FORM:
        def adv(X, t):
            y, s = _split(X)
            return np.concatenate([np.asarray(base_flow.advance_fn(y, t), dtype=float),
                                   (s + t)[..., None]], axis=-1)
        flow = FlowSpec.closed_form(adv, default_horizon=horizon)
    else:
        def field(X):
            y, _ = _split(X)
            return np.concatenate([np.asarray(base_flow.field(y), dtype=float),
                                   np.ones(y.shape[:-1] + (1,))], axis=-1)
        flow = FlowSpec.ode(field, step=base_flow.step, default_horizon=horizon)
    return model, flow


def embed(Y) -> np.ndarray:
    """Base states at time ``s = 0``."""
    Y = as_states(Y)
    return np.concatenate([Y, np.zeros(Y.shape[:-1] + (1,))], axis=-1)


def make_lift(alpha: float) -> Callable:
    """Continuation values ``V((y, s)) = exp(-alpha s) V_Y(y)`` from a base-space field."""
    def lift(V_Y, X):
        y, s = _split(X)
        return np.exp(-alpha * s) * np.asarray(V_Y(y), dtype=float)
    return lift


def solve_discounted(base: ImpulseModel, base_flow: FlowSpec, alpha: float, grid: Grid,
                     cfg: Optional[ThetaSearchConfig] = None,
                     q: Optional[QuadratureConfig] = None, tol: float = 1e-6,
                     max_iter: int = 500, workers: int = 1):
    """Value iteration for the wrapped model restricted to the ``s = 0`` slice.

    ``grid`` lives on the base space ``Y``.  Returns ``(V_Y, reports)``.
    """
    model, flow = wrap_discounted(base, base_flow, alpha)
    lift = make_lift(alpha)
    op = make_operator(model, flow, grid, cfg, q, workers, embed=embed, lift=lift)
    return value_iteration(model, flow, grid, cfg, q, tol, max_iter, operator=op)


class _DirectBackup:
    """Discounted backup at fixed base states, independent of the grid machinery.

    Running costs come from adaptive quadrature (``quad_vec`` over a wait
    scan, ``quad`` inside the refinement), and the wait is optimized by a
    scan followed by bounded scalar minimization around the best scan point.
    """

    def __init__(self, base, base_flow, alpha, Y, q=None, coarse=80):
        self.base, self.flow, self.alpha = base, base_flow, float(alpha)
        self.q = q or DEFAULT_QUADRATURE
        self.Y = as_states(Y).reshape(-1, base.dim)
        T = min(horizon_for(base_flow, self.q), 50.0 / self.alpha)
        self.thetas = np.concatenate([[0.0], np.geomspace(1e-6 * T, T, coarse)])
        Yb = self.Y

        def rate(u):
            return math.exp(-self.alpha * u) * np.asarray(
                base.gradual_cost(advance(base_flow, Yb, u)), dtype=float)

        pieces = [np.zeros(len(Yb))]
        for a, b in zip(self.thetas[:-1], self.thetas[1:]):
            val, _ = integrate.quad_vec(rate, a, b, epsabs=self.q.abs_tol,
                                        epsrel=self.q.rel_tol)
            pieces.append(val)
        self.cum = np.cumsum(np.stack(pieces, axis=1), axis=1)
        self.states = advance(base_flow, Yb[:, None, :],
                              np.broadcast_to(self.thetas, (len(Yb), len(self.thetas))))
        # the scan ends at T = 50/alpha or beyond, where the remaining tail is negligible
        self.stop = self.cum[:, -1]

    def _iv(self, V_Y, Z):
        vals = [np.asarray(self.base.impulse_cost(Z, a), dtype=float)
                + np.asarray(V_Y(self.base.jump(Z, a)), dtype=float) for a in self.base.actions]
        return np.min(np.stack(vals), axis=0)

    def evaluate(self, V_Y) -> np.ndarray:
        J = self.cum + np.exp(-self.alpha * self.thetas) * self._iv(V_Y, self.states)
        best = np.minimum(J.min(axis=1), self.stop)
        m = len(self.thetas)
        for i, k in enumerate(np.argmin(J, axis=1)):
            lo_k, hi_k = max(k - 1, 0), min(k + 1, m - 1)
            y = self.Y[i]
            lo = self.thetas[lo_k]

            def Ji(theta, y=y, lo=lo, lo_k=lo_k, i=i):
                def f(u):
                    z = advance(self.flow, y, u)
                    return math.exp(-self.alpha * u) * float(self.base.gradual_cost(z))
                run, _ = integrate.quad(f, lo, theta, epsabs=self.q.abs_tol,
                                        epsrel=self.q.rel_tol, limit=self.q.max_subdivisions)
                z = advance(self.flow, y, theta)[None, :]
                return self.cum[i, lo_k] + run + math.exp(-self.alpha * theta) * self._iv(V_Y, z)[0]

            if hi_k > lo_k:
                res = optimize.minimize_scalar(Ji, bounds=(lo, self.thetas[hi_k]),
                                               method="bounded", options={"xatol": 1e-9})
                best[i] = min(best[i], float(res.fun))
        return best


def direct_backup(base: ImpulseModel, base_flow: FlowSpec, alpha: float, V_Y: Callable, y,
                  q: Optional[QuadratureConfig] = None, coarse: int = 80) -> float:
    """``min_theta {int_0^theta e^{-alpha u} C^g_Y du + e^{-alpha theta} IV_Y(phi_Y(y, theta))}``."""
    return float(_DirectBackup(base, base_flow, alpha, y, q, coarse).evaluate(V_Y)[0])


def direct_value_iteration(base: ImpulseModel, base_flow: FlowSpec, alpha: float, grid: Grid,
                           q: Optional[QuadratureConfig] = None, tol: float = 1e-6,
                           max_iter: int = 500, coarse: int = 80):
    """Successive approximations of the discounted backup on a base-space grid."""
    op = _DirectBackup(base, base_flow, alpha, grid.nodes(), q, coarse)
    V = ValueField.zeros(grid)
    for n in range(1, max_iter + 1):
        new = op.evaluate(V)
        change = float(np.max(np.abs(new - V.values)))
        V = V.with_values(new, version=n)
        if change <= tol:
            return V
    raise NonConvergenceError(f"direct discounted iteration did not reach tol={tol}", field=V)


def discounted_forward_generator(V_Y: Callable, base_flow: FlowSpec, base_model: ImpulseModel,
                                 alpha: float, y, h: float = 1e-3,
                                 gen_tol: float = 1e-3) -> GeneratorEstimate:
    """Forward generator ``lim [e^{-alpha h} V(phi(y,h)) - V(y)]/h + (1/h) int e^{-alpha u} C^g``.

    Evaluated as the plain forward generator of the wrapped model at
    ``(y, 0)``; ``alpha = 0`` is the undiscounted generator.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if alpha == 0:
        return forward_generator(V_Y, base_flow, base_model, y, h, gen_tol)
    model, flow = _wrap(base_model, base_flow, float(alpha))
    lift = make_lift(alpha)
    return forward_generator(lambda X: lift(V_Y, X), flow, model, embed(as_states(y)), h,
                             gen_tol)


def deterioration_model(reset_cost: float = 0.3):
    """A one-dimensional wear process used to exercise the discounted reduction.

    ``y`` in ``[0, 1]`` drifts toward 1 as ``y(t) = 1 - (1 - y) e^{-t}``,
    costs ``y^2`` per unit time and can be reset to 0 at a fixed price.
    """
    bounds = Bounds((0.0,), (1.0,))
    model = ImpulseModel(gradual_cost=lambda Y: as_states(Y)[..., 0] ** 2,
                         impulse_cost=lambda Y, a: np.full(as_states(Y).shape[:-1], reset_cost),
                         jump=lambda Y, a: np.zeros_like(as_states(Y)),
                         actions=(0,), bounds=bounds, impulse_cost_floor=reset_cost,
                         name="deterioration", params={"reset_cost": reset_cost})
    flow = FlowSpec.closed_form(lambda Y, t: 1.0 - (1.0 - as_states(Y)) * np.exp(-t)[..., None],
                                default_horizon=60.0)
    return model, flow


def constant_cost_model(k: float = 2.0, impulse_cost: float = 10.0):
    """Constant running cost ``k`` on ``[0, 1]`` with decay ``y' = -y`` and a useless impulse."""
    bounds = Bounds((0.0,), (1.0,))
    model = ImpulseModel(gradual_cost=lambda Y: np.full(as_states(Y).shape[:-1], float(k)),
                         impulse_cost=lambda Y, a: np.full(as_states(Y).shape[:-1],
                                                           float(impulse_cost)),
                         jump=lambda Y, a: as_states(Y).copy(), actions=(0,), bounds=bounds,
                         impulse_cost_floor=impulse_cost, name="constant",
                         params={"k": k, "impulse_cost": impulse_cost})
    flow = FlowSpec.closed_form(lambda Y, t: as_states(Y) * np.exp(-t)[..., None],
                                default_horizon=60.0)
    return model, flow
