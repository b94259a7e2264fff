import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from impulse_dp.core import (INFINITY, Bounds, ImpulseModel, apply_impulse, check_wait,
                             stage_cost, validate_model)
from impulse_dp.errors import DomainError, ModelError, ModelValidationWarning
from impulse_dp.flow import FlowSpec, advance, running_cost
from impulse_dp.sir import SirParams, sir_flow_spec, sir_model

P = SirParams(beta=4.0, gamma=3.0, c=5.0)
MODEL, FLOW = sir_model(P), sir_flow_spec(P)

states = st.tuples(st.floats(0.05, 9.0), st.floats(0.05, 9.0)).filter(lambda s: sum(s) < 19.0)


@pytest.mark.parametrize("x,expected", [((8.0, 2.0), (8.0, 0.0)), ((8.0, 0.0), (8.0, 0.0)),
                                        ((0.0, 3.0), (0.0, 0.0))])
def test_isolation_clears_infectives(x, expected):
    assert apply_impulse(MODEL, np.array(x), 1).tolist() == list(expected)


def test_apply_impulse_rejects_unknown_action_and_outside_state():
    with pytest.raises(DomainError):
        apply_impulse(MODEL, np.array([8.0, 2.0]), 2)
    with pytest.raises(DomainError):
        apply_impulse(MODEL, np.array([15.0, 15.0]), 1)


def test_jump_leaving_space_is_a_domain_error():
    bad = ImpulseModel(gradual_cost=lambda X: np.zeros(np.shape(X)[:-1]),
                       impulse_cost=lambda X, a: np.ones(np.shape(X)[:-1]),
                       jump=lambda X, a: np.asarray(X) + 5.0, actions=(0,),
                       bounds=Bounds((0.0,), (1.0,)))
    with pytest.raises(DomainError):
        apply_impulse(bad, np.array([0.5]), 0)
    with pytest.raises(ModelError):
        validate_model(bad)


def test_stage_cost_zero_wait_is_impulse_cost():
    assert stage_cost(MODEL, FLOW, np.array([8.0, 2.0]), 0.0, 1) == 10.0


def test_stage_cost_finite_wait():
    # running cost is x1(0) - x1(ln 2) since the rate is -dx1/dt
    assert stage_cost(MODEL, FLOW, np.array([8.0, 2.0]), math.log(2), 1) == pytest.approx(
        13.787, abs=1e-3)


def test_stage_cost_stop_ignores_action():
    assert stage_cost(MODEL, FLOW, np.array([8.0, 2.0]), INFINITY, 1) == pytest.approx(8.0, abs=1e-4)
    assert stage_cost(MODEL, FLOW, np.array([8.0, 2.0]), INFINITY, 99) == pytest.approx(8.0, abs=1e-4)


@pytest.mark.parametrize("theta", [-1.0, math.nan])
def test_invalid_wait_times(theta):
    with pytest.raises(DomainError):
        check_wait(theta)


@given(states, st.floats(0.0, 5.0))
def test_running_cost_is_susceptible_loss(x, theta):
    x = np.array(x)
    run = running_cost(FLOW, MODEL, x, theta)
    assert run == pytest.approx(x[0] - advance(FLOW, x, theta)[0], abs=1e-8)


def _flat_fee_model():
    # state-independent impulse price: the stage cost can only grow with the wait
    return ImpulseModel(gradual_cost=MODEL.gradual_cost,
                        impulse_cost=lambda X, a: np.full(np.shape(X)[:-1], 2.0),
                        jump=MODEL.jump, actions=(1,), bounds=MODEL.bounds,
                        impulse_cost_floor=2.0)


@given(states, st.floats(0.0, 4.0), st.floats(0.0, 4.0))
def test_stage_cost_nondecreasing_in_wait_for_flat_fee(x, t1, t2):
    m = _flat_fee_model()
    lo, hi = sorted((t1, t2))
    x = np.array(x)
    assert stage_cost(m, FLOW, x, lo, 1) <= stage_cost(m, FLOW, x, hi, 1) + 1e-9


def test_validate_model_reports_sir_as_positive():
    rep = validate_model(MODEL, flow=FLOW)
    assert rep["positive"] and rep["cemetery_ok"]


def test_negative_cost_warns_but_passes():
    neg = ImpulseModel(gradual_cost=lambda X: -np.ones(np.shape(X)[:-1]),
                       impulse_cost=lambda X, a: np.ones(np.shape(X)[:-1]),
                       jump=lambda X, a: np.asarray(X), actions=(0,),
                       bounds=Bounds((0.0,), (1.0,)))
    with pytest.warns(ModelValidationWarning):
        rep = validate_model(neg)
    assert not rep["positive"]


def test_impulse_cost_floor_enforced():
    cheap = ImpulseModel(gradual_cost=lambda X: np.zeros(np.shape(X)[:-1]),
                         impulse_cost=lambda X, a: np.full(np.shape(X)[:-1], 0.01),
                         jump=lambda X, a: np.asarray(X), actions=(0,),
                         bounds=Bounds((0.0,), (1.0,)), impulse_cost_floor=0.1)
    with pytest.raises(ModelError):
        validate_model(cheap)


def test_model_needs_actions():
    with pytest.raises(ModelError):
        ImpulseModel(gradual_cost=None, impulse_cost=None, jump=None, actions=(),
                     bounds=Bounds((0.0,), (1.0,)))


def test_triangle_bounds():
    b = MODEL.bounds
    assert b.contains(np.array([[1.0, 1.0], [0.0, 0.0], [15.0, 6.0], [-1e-3, 1.0]])).tolist() == [
        True, True, False, False]
    pts = b.sample(500, np.random.default_rng(0))
    assert np.all(pts.sum(axis=1) <= P.N) and np.all(pts >= 0)
