import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from impulse_dp.bellman import Grid
from impulse_dp.core import Bounds, ImpulseModel
from impulse_dp.discount import (constant_cost_model, deterioration_model,
                                 discounted_forward_generator, embed, make_lift,
                                 solve_discounted, wrap_discounted)
from impulse_dp.errors import ModelValidationWarning
from impulse_dp.flow import FlowSpec, advance, stopping_value


def test_wrap_rejects_bad_rates_and_weights():
    m, f = deterioration_model()
    for alpha in (0.0, -1.0, math.inf, math.nan):
        with pytest.raises(ValueError):
            wrap_discounted(m, f, alpha)
    with pytest.raises(ValueError):
        wrap_discounted(m, f, 0.5, weight="hyperbolic")


@given(st.floats(0.0, 1.0), st.floats(0.0, 20.0), st.floats(0.0, 5.0))
def test_wrapped_costs_carry_discount_factor(y, s, t):
    base, bf = deterioration_model(reset_cost=0.3)
    m, f = wrap_discounted(base, bf, 0.5)
    X = np.array([[y, s]])
    assert m.gradual_cost(X)[0] == pytest.approx(math.exp(-0.5 * s) * y * y)
    assert m.impulse_cost(X, 0)[0] == pytest.approx(math.exp(-0.5 * s) * 0.3)
    assert m.jump(X, 0)[0].tolist() == [0.0, s]
    Z = advance(f, X, np.array([t]))[0]
    assert Z[1] == pytest.approx(s + t) and Z[0] == pytest.approx(advance(bf, [y], t)[0])


def test_wrapped_horizon_is_capped_by_discount():
    base, bf = deterioration_model()
    _, f = wrap_discounted(base, bf, 2.0)
    assert f.default_horizon == 25.0
    _, f = wrap_discounted(base, bf, 0.01)
    assert f.default_horizon == bf.default_horizon


def test_unbounded_running_cost_warns():
    base = ImpulseModel(gradual_cost=lambda Y: np.full(np.shape(Y)[:-1], np.inf),
                        impulse_cost=lambda Y, a: np.ones(np.shape(Y)[:-1]),
                        jump=lambda Y, a: np.asarray(Y), actions=(0,),
                        bounds=Bounds((0.0,), (1.0,)))
    flow = FlowSpec.closed_form(lambda Y, t: np.asarray(Y) + 0.0 * np.asarray(t)[..., None])
    with pytest.warns(ModelValidationWarning):
        wrap_discounted(base, flow, 1.0)


def test_embed_and_lift():
    Y = np.array([[0.2], [0.7]])
    X = embed(Y)
    assert X.tolist() == [[0.2, 0.0], [0.7, 0.0]]
    lift = make_lift(0.5)
    V_Y = lambda Y: 1.0 + np.asarray(Y)[..., 0]  # noqa: E731
    assert lift(V_Y, np.array([[0.2, 2.0]]))[0] == pytest.approx(1.2 * math.exp(-1.0))


@pytest.mark.parametrize("alpha", [0.5, 2.0])
def test_constant_running_cost_gives_rate_over_alpha(alpha):
    base, bf = constant_cost_model(k=2.0, impulse_cost=10.0)
    V, _ = solve_discounted(base, bf, alpha, Grid.over(base.bounds, (6,)), tol=1e-8)
    assert V.values == pytest.approx(np.full(6, 2.0 / alpha), abs=1e-6)


def test_deterioration_value_properties():
    base, bf = deterioration_model(reset_cost=0.3)
    alpha = 0.5
    V, reports = solve_discounted(base, bf, alpha, Grid.over(base.bounds, (11,)), tol=1e-7)
    v = V.values
    assert reports[-1].sup_change <= 1e-7
    # more wear never costs less, resetting caps the value, and nothing beats zero
    assert np.all(np.diff(v) >= -1e-9)
    assert np.all(v <= 0.3 + v[0] + 1e-9)
    assert np.all(v >= 0) and np.all(v <= 1.0 / alpha)
    # from y = 0 no reset is worth it before wear has built up, so V(0) < never resetting
    m, f = wrap_discounted(base, bf, alpha)
    assert v[0] < stopping_value(f, m, np.array([0.0, 0.0]))


def test_discounted_generator_of_constant_value():
    base, bf = constant_cost_model(k=2.0)
    V_Y = lambda Y: np.full(np.shape(Y)[:-1], 4.0)  # noqa: E731
    est = discounted_forward_generator(V_Y, bf, base, 0.5, np.array([0.3]))
    assert est.forward == pytest.approx(0.0, abs=1e-6)
    plain = discounted_forward_generator(V_Y, bf, base, 0.0, np.array([0.3]))
    assert plain.forward == pytest.approx(2.0, abs=1e-6)
    with pytest.raises(ValueError):
        discounted_forward_generator(V_Y, bf, base, -1.0, np.array([0.3]))
