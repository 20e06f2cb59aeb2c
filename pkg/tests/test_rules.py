import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given

from alba.rules import (RuleSyntaxError, ScalingRule, blind, compile_expression, deficit, eta_rule,
                        lipschitz_estimate, lipschitz_stable, prop4_rule, rate_idle,
                        satisfies_optimality_condition)
from alba.state import Dispatch, FluidState, Params

from .strategies import fluid_states

P = Params(lam=0.5, alpha=0.35, beta=0.1, gamma=0.025, d=0, dispatch=Dispatch.JBT)


def _with_deficit(p, dfc):
    # x12 chosen so that lam - x12 - beta * x01 equals dfc
    x12 = p.lam - dfc
    return FluidState.from_coords(3, x00=1 - x12, x12=x12)


def test_blind_range():
    assert blind(1.0).evaluate(_with_deficit(P, 0.1)) == 1.0
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError, match=r"\(0,1\]"):
            blind(bad)


def test_rate_idle_examples():
    r = rate_idle(P)
    assert r.evaluate(_with_deficit(P, 0.0)) == 0.0
    assert r.evaluate(_with_deficit(P, P.lam)) == 1.0
    assert r.evaluate(_with_deficit(P, 0.2)) == pytest.approx(0.4)
    x = FluidState.from_coords(3, x00=0.5, x01=0.3, x12=0.2)
    assert r.evaluate(x) == pytest.approx((0.5 - 0.03 - 0.2) / 0.5)
    assert r.declared_inputs == {"x01", "x12"}


def test_eta_rule_value_against_decimal():
    getcontext().prec = 50
    expected = (1 - (-Decimal("0.5")).exp()) / (1 - (-Decimal(1)).exp())
    g = eta_rule(1.0, P).evaluate(_with_deficit(P, 0.25))
    assert g == pytest.approx(float(expected), abs=1e-14)
    assert g == pytest.approx(0.6225, abs=1e-4)
    for eta in (1e-6, 1.0, 1e3):
        r = eta_rule(eta, P)
        assert r.evaluate(_with_deficit(P, 0.0)) == 0.0
        assert r.evaluate(_with_deficit(P, P.lam)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        eta_rule(0.0, P)


def test_prop4_rule_examples():
    p = Params(lam=0.7, alpha=0.05, beta=0.1, gamma=0.025)
    r = prop4_rule(p)
    assert r.evaluate(FluidState.from_coords(2, x00=0.3, x12=0.7)) == pytest.approx(0.0, abs=1e-15)
    assert r.evaluate(FluidState.from_coords(2, x00=1.0)) == 1.0
    assert r.evaluate(FluidState.from_coords(2, x00=0.5, x12=0.5)) == pytest.approx(0.2 / 0.7)


def test_expression_grammar():
    ops, consts, inputs = compile_expression("min(1, max(0, 2 * x02 - y1 / 3))", P)
    assert inputs == {"x02", "y1"}
    r = ScalingRule.from_expression("exp(-x00) * pos(lam - y1)", P)
    x = FluidState.from_coords(3, x00=0.4, x02=0.3, x12=0.3)
    assert r.evaluate(x) == pytest.approx(math.exp(-0.4) * 0.2)
    # results outside [0, 1] are clipped
    assert ScalingRule.from_expression("2 + x00").evaluate(x) == 1.0
    assert ScalingRule.from_expression("-x00").evaluate(x) == 0.0
    for bad in ("x00 ** 2", "foo(x00)", "z + 1", "import os", "x00 <", "lam"):
        with pytest.raises(RuleSyntaxError):
            compile_expression(bad)


def test_callable_rules():
    r = ScalingRule.from_callable(lambda x: 0.5 * x.x00, inputs=("x00",))
    assert not r.compiled
    assert r.evaluate(FluidState.from_coords(2, x00=0.4, x02=0.6)) == 0.2
    bad = ScalingRule.from_callable(lambda x: 2.0)
    with pytest.raises(ValueError):
        bad.evaluate(FluidState.from_coords(2, x00=1.0))


@given(fluid_states(buffer=4))
def test_rules_stay_in_unit_interval(x):
    for r in (blind(0.3), rate_idle(P), eta_rule(1.0, P), eta_rule(1e3, P), prop4_rule(P)):
        g = r.evaluate(x)
        assert 0.0 <= g <= 1.0
        assert g == r.evaluate_vector(x.as_vector())


@given(fluid_states(buffer=4))
def test_optimal_rules_vanish_exactly_without_deficit(x):
    dfc = deficit(x, P)
    for r in (rate_idle(P), eta_rule(1.0, P)):
        assert (r.evaluate(x) == 0.0) == (dfc <= 0.0) or 0 < dfc < 1e-12


def test_optimality_condition_reports():
    assert satisfies_optimality_condition(rate_idle(P), P).passed
    assert satisfies_optimality_condition(eta_rule(1.0, P), P).passed
    rep = satisfies_optimality_condition(blind(0.2), P)
    assert not rep.passed
    assert rep.deficit_value <= 0 and rep.g_value == 0.2
    assert not satisfies_optimality_condition(prop4_rule(P), P).passed


def test_lipschitz_estimates():
    p = Params(lam=0.7, alpha=0.05, beta=0.1, gamma=0.025)
    bound = math.sqrt(2 * p.beta ** 2 + 8) / p.lam
    est = lipschitz_estimate(rate_idle(p), samples=4000)
    assert 0 < est <= bound + 1e-9
    assert lipschitz_estimate(blind(0.3), samples=500) == 0.0
    assert lipschitz_stable(rate_idle(p))[0]
    # a jump is not Lipschitz: estimates grow with the sample
    steep = ScalingRule.from_expression("min(1, 1e9 * pos(x00 - 0.1))", p)
    stable, est = lipschitz_stable(steep, sizes=(200, 20000))
    assert not stable and est[1] > 10 * bound
