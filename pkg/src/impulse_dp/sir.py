"""SIR epidemic with isolation impulses.

State ``(x1, x2)`` = (susceptible, infective).  The running cost is the
infection rate ``beta*x1*x2/(x1+x2)``, an impulse isolates every infective
at cost ``c*x2`` and jumps to ``(x1, 0)``, and the axis ``x2 = 0`` is the
absorbing zero-cost set.  Three parameter regimes have closed-form value
functions and threshold strategies; they are the oracles for the numerical
solver.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import INFINITY, Bounds, CemeterySpec, ImpulseModel, StationaryStrategy, as_states
from .errors import DomainError, RegimeError
from .flow import FlowSpec


@dataclass(frozen=True)
class SirParams:
    beta: float
    gamma: float
    c: float
    N: float = 20.0

    def __post_init__(self):
        for name in ("beta", "gamma", "c", "N"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite number, got {v}")


class RegimeTag(enum.Enum):
    SUPERCRITICAL = "supercritical"
    SUBCRITICAL_EXPENSIVE = "subcritical-expensive"
    SUBCRITICAL_CHEAP = "subcritical-cheap"


@dataclass(frozen=True)
class Regime:
    tag: RegimeTag
    threshold_slope: Optional[float]


def classify(p: SirParams) -> Regime:
    b, g, c = p.beta, p.gamma, p.c
    if b >= g:
        return Regime(RegimeTag.SUPERCRITICAL, 1.0 / c)
    if c >= b / (g - b):
        return Regime(RegimeTag.SUBCRITICAL_EXPENSIVE, None)
    return Regime(RegimeTag.SUBCRITICAL_CHEAP, (b + b * c - g * c) / (g * c))


def _split(X):
    X = as_states(X)
    return X, X[..., 0], X[..., 1]


def infection_rate(p: SirParams, X) -> np.ndarray:
    _, x1, x2 = _split(X)
    tot = x1 + x2
    with np.errstate(divide="ignore", invalid="ignore"):
        r = p.beta * x1 * x2 / tot
    return np.where(tot > 0, r, 0.0)


def sir_field(p: SirParams, X) -> np.ndarray:
    """Right-hand side of the two-compartment ODE."""
    _, x1, x2 = _split(X)
    inf = infection_rate(p, X)
    return np.stack([-inf, inf - p.gamma * x2], axis=-1)


def sir_flow(p: SirParams, X, t) -> np.ndarray:
    """Closed-form solution of the SIR flow, vectorized over states and times.

    Boundary states follow the ODE: ``x2 = 0`` is a fixed point and ``x1 = 0``
    decays as pure recovery.  Exponents are combined in log space so that
    long horizons do not overflow.
    """
    X, x1, x2 = _split(X)
    t = np.asarray(t, dtype=float)
    if np.any(X < 0):
        raise DomainError("SIR states must be non-negative")
    if np.any(t < 0):
        raise DomainError("SIR flow runs forward only")
    x1, x2, t = np.broadcast_arrays(x1, x2, t)
    b, g = p.beta, p.gamma
    interior = (x1 > 0) & (x2 > 0)
    s1 = np.where(interior, x1, 1.0)
    s2 = np.where(interior, x2, 1.0)
    with np.errstate(over="ignore", under="ignore"):
        if b != g:
            k = b / (b - g)
            a = (b - g) * t
            log_r = np.log(s2) - np.log(s1)
            L = k * (np.log1p(np.exp(log_r)) - np.logaddexp(0.0, log_r + a))
            y1 = s1 * np.exp(L)
            y2 = s2 * np.exp(a + L)
        else:
            e = np.exp(-b * s2 * t / (s1 + s2))
            y1 = s1 * e
            y2 = s2 * e
    y1 = np.where(interior, y1, x1)
    y2 = np.where(interior, y2, np.where((x1 <= 0) & (x2 > 0), x2 * np.exp(-g * t), x2))
    return np.stack([y1, y2], axis=-1)


def default_horizon(p: SirParams) -> float:
    rate = min(abs(p.beta - p.gamma), p.gamma) if p.beta != p.gamma else p.gamma
    return 80.0 / rate


def sir_bounds(p: SirParams) -> Bounds:
    return Bounds(lower=(0.0, 0.0), upper=(p.N, p.N),
                  constraint_matrix=((1.0, 1.0),), constraint_rhs=(p.N,))


def sir_model(p: SirParams, cemetery_tol: float = 1e-12) -> ImpulseModel:
    def gradual(X):
        return infection_rate(p, X)

    def impulse(X, a):
        return p.c * as_states(X)[..., 1]

    def jump(X, a):
        X = as_states(X)
        return np.stack([X[..., 0], np.zeros_like(X[..., 1])], axis=-1)

    def dead(X):
        return as_states(X)[..., 1] <= cemetery_tol

    return ImpulseModel(gradual_cost=gradual, impulse_cost=impulse, jump=jump,
                        actions=(1,), bounds=sir_bounds(p),
                        cemetery=CemeterySpec(dead, cemetery_tol), name="sir",
                        params={"beta": p.beta, "gamma": p.gamma, "c": p.c, "N": p.N})


def sir_flow_spec(p: SirParams, kind: str = "closed-form", step: float = 1e-3) -> FlowSpec:
    if kind == "closed-form":
        return FlowSpec.closed_form(lambda X, t: sir_flow(p, X, t),
                                    default_horizon=default_horizon(p))
    if kind == "ode-field":
        return FlowSpec.ode(lambda X: sir_field(p, X), step=step,
                            default_horizon=default_horizon(p))
    raise ValueError(f"unknown flow kind {kind!r}")


def removed(x0, X) -> np.ndarray:
    """Removed compartment reconstructed from the conserved total population."""
    x0 = as_states(x0)
    X = as_states(X)
    return x0[..., 0] + x0[..., 1] - X[..., 0] - X[..., 1]


def in_intervention_region(p: SirParams, X) -> np.ndarray:
    """Closed-form intervention set: where the optimal strategy isolates now."""
    _, x1, x2 = _split(X)
    reg = classify(p)
    if reg.tag is RegimeTag.SUBCRITICAL_EXPENSIVE:
        return x2 <= 0
    return x2 <= reg.threshold_slope * x1


def analytic_value(p: SirParams, X) -> np.ndarray:
    """Closed-form value function on the triangle; zero on both axes."""
    _, x1, x2 = _split(X)
    b, g, c = p.beta, p.gamma, p.c
    reg = classify(p)
    interior = (x1 > 0) & (x2 > 0)
    s1 = np.where(interior, x1, 1.0)
    w = np.where(interior, x2, 1.0) / s1
    with np.errstate(over="ignore", under="ignore"):
        if reg.tag is RegimeTag.SUPERCRITICAL:
            v = np.where(w <= 1.0 / c, c * x2, x1)
        elif reg.tag is RegimeTag.SUBCRITICAL_EXPENSIVE:
            v = s1 - s1 * (1.0 + w) ** (-b / (g - b))
        else:
            base = g * c * (1.0 + w) / (b + b * c)
            above = s1 * (1.0 - base ** (-b / (g - b)) * (1.0 + c) * (g - b) / g)
            v = np.where(w <= reg.threshold_slope, c * x2, above)
    return np.where(interior, v, 0.0)


def line_hitting_time(p: SirParams, x) -> Optional[float]:
    """Time for the trajectory from ``x`` to reach the switching line.

    Returns 0 on the line and ``None`` below it (or on ``x1 = 0``, which
    never reaches it).
    """
    reg = classify(p)
    if reg.tag is not RegimeTag.SUBCRITICAL_CHEAP:
        raise RegimeError("the switching line exists only in the subcritical-cheap regime")
    x1, x2 = (float(v) for v in as_states(x)[:2])
    s = reg.threshold_slope
    if x1 <= 0:
        return None
    w = x2 / x1
    if abs(w - s) <= 1e-12 * s:
        return 0.0
    if w < s:
        return None
    return math.log(w / s) / (p.gamma - p.beta)


def analytic_strategy(p: SirParams, x) -> float:
    """Optimal wait ``inf{t : phi(x, t) in L}`` for one state.

    Zero inside the intervention set, the switching-line hitting time above
    the line in the subcritical-cheap regime, INFINITY otherwise.  The only
    action is ``1``.
    """
    x = as_states(x)
    if bool(in_intervention_region(p, x)):
        return 0.0
    if classify(p).tag is RegimeTag.SUBCRITICAL_CHEAP:
        t = line_hitting_time(p, x)
        return INFINITY if t is None else t
    return INFINITY


def analytic_policy(p: SirParams) -> StationaryStrategy:
    return StationaryStrategy(wait=lambda x: analytic_strategy(p, x), act=lambda x: 1)


def threshold_policy(p: SirParams, slope: float, cheap_wait: bool = True) -> StationaryStrategy:
    """Isolate below ``x2 = slope*x1``; above it wait until the line is hit.

    Used to build deliberately shifted (suboptimal) thresholds.  Hitting
    times come from the ratio identity ``x2/x1 = w0 * exp((beta-gamma) t)``.
    """
    def wait(x):
        x1, x2 = (float(v) for v in as_states(x)[:2])
        if x2 <= slope * x1:
            return 0.0
        if not cheap_wait or x1 <= 0 or p.beta >= p.gamma:
            return INFINITY
        return math.log((x2 / x1) / slope) / (p.gamma - p.beta)

    return StationaryStrategy(wait=wait, act=lambda x: 1)


def upsilon(p: SirParams, w) -> np.ndarray:
    """Impulse gap per susceptible above the switching line, as a function of ``w = x2/x1``.

    Strictly convex with a double zero at the threshold slope.  The last
    factor is ``(gamma-beta)/gamma``, which is what the closed-form value
    function and the double zero both require.
    """
    reg = classify(p)
    if reg.tag is not RegimeTag.SUBCRITICAL_CHEAP:
        raise RegimeError("upsilon is defined in the subcritical-cheap regime only")
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise DomainError("upsilon needs w > 0")
    b, g, c = p.beta, p.gamma, p.c
    base = g * c * (1.0 + w) / (b + b * c)
    return c * w - 1.0 + base ** (-b / (g - b)) * (1.0 + c) * (g - b) / g


def gradual_threshold(p: SirParams, U, kind: str) -> np.ndarray:
    """Threshold slope of the bounded-rate isolation problem with maximal rate ``U``.

    ``kind="zeta"`` is the dispersal-line slope for ``beta >= gamma``;
    ``kind="xi"`` the switching-line slope for the subcritical-cheap regime.
    Both tend to the impulse thresholds as ``U`` grows.
    """
    U = np.asarray(U, dtype=float)
    if np.any(U <= 0):
        raise DomainError("U must be > 0")
    b, g, c = p.beta, p.gamma, p.c
    expo = (g + U - b) / (g + U)
    if kind == "zeta":
        if b < g:
            raise RegimeError("zeta requires beta >= gamma")
        return ((g + U + c * U) / (c * U)) ** expo - 1.0
    if kind == "xi":
        if classify(p).tag is not RegimeTag.SUBCRITICAL_CHEAP:
            raise RegimeError("xi requires beta < gamma and c < beta/(gamma-beta)")
        return (b * (g + U + c * U) / (c * g * (g + U - b))) ** expo - 1.0
    raise ValueError(f"kind must be 'zeta' or 'xi', got {kind!r}")


def threshold_line(p: SirParams, n: int = 101) -> np.ndarray:
    """Sample points of the regime's threshold line inside the triangle."""
    reg = classify(p)
    if reg.threshold_slope is None:
        x1 = np.linspace(0.0, p.N, n)
        return np.stack([x1, np.zeros_like(x1)], axis=-1)
    s = reg.threshold_slope
    x1 = np.linspace(0.0, p.N / (1.0 + s), n)
    return np.stack([x1, s * x1], axis=-1)


FIGURE_PARAMS = {
    "fig1": SirParams(beta=4.0, gamma=3.0, c=5.0),
    "fig2": SirParams(beta=4.0, gamma=4.0, c=5.0),
    "fig3": SirParams(beta=3.0, gamma=4.0, c=5.0),
    "fig4": SirParams(beta=3.0, gamma=4.0, c=1.5),
}
