from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, strategies as st

from alba import experiments as ex
from alba.fixed_point import (FixedPointError, blind_pod1_closed_form, find_fixed_points, is_saturated,
                              jbt_family, jbt_tail, pod_tail, reference_point_x_circ,
                              saturation_threshold, solve_fixed_point, solve_zd, state_for_x02)
from alba.fluid import drift
from alba.rules import ScalingRule, blind, prop4_rule, rate_idle
from alba.state import Dispatch, FluidState, Params, per_warm_queue

FIG1 = ex.scenario_fig1().params.replace(buffer=None)


def test_fig1_closed_form():
    theta = ex.fig1_theta(FIG1)
    assert theta == pytest.approx(0.06, abs=1e-15)
    fp = solve_fixed_point(blind(theta), FIG1)
    assert fp.x02 == pytest.approx(0.12, abs=1e-12)
    assert fp.state.x01 == pytest.approx(0.03, abs=1e-12)
    assert fp.state.x00 == pytest.approx(0.15, abs=1e-12)
    assert per_warm_queue(fp.state) == pytest.approx(35 / 6, abs=1e-9)
    assert fp.residual <= 1e-12 and not fp.saturated and fp.unique
    x02, q = blind_pod1_closed_form(theta, FIG1)
    assert x02 == pytest.approx(0.12) and q == pytest.approx(35 / 6)


def test_zd_against_decimal_bisection():
    p = Params(lam=0.6, alpha=0.2, beta=0.1, gamma=0.05, d=2, dispatch=Dispatch.JBT)
    getcontext().prec = 40
    x02, lam = Decimal("0.3"), Decimal("0.6")
    lo, hi = Decimal(0), Decimal(1)
    for _ in range(120):
        mid = (lo + hi) / 2
        r = lam / (mid + x02)
        if mid + x02 - x02 * (1 + r + r * r) < 0:
            lo = mid
        else:
            hi = mid
    assert solve_zd(0.3, p) == pytest.approx(float(lo), abs=1e-11)
    assert solve_zd(0.3, p.replace(d=0)) == 0.0
    with pytest.raises(ValueError):
        solve_zd(0.5, p)


def test_saturated_reference_point():
    assert saturation_threshold(FIG1) == pytest.approx(0.006)
    fp = solve_fixed_point(blind(0.5), FIG1)
    assert fp.saturated and is_saturated(blind(0.5), FIG1)
    assert fp.state.x00 == 0.0
    assert fp.state.x01 == pytest.approx(0.06) and fp.state.x02 == pytest.approx(0.24)
    assert fp.residual <= 1e-12
    assert reference_point_x_circ(FIG1).x02 == pytest.approx(0.24)


@pytest.mark.parametrize("dispatch,d", [(Dispatch.POD, 1), (Dispatch.POD, 2), (Dispatch.JBT, 1),
                                        (Dispatch.JBT, 3)])
def test_equilibrium_residuals(dispatch, d):
    p = Params(lam=0.6, alpha=0.2, beta=0.1, gamma=0.05, d=d, dispatch=dispatch)
    found = find_fixed_points(blind(0.05), p)
    interior = [f for f in found if f.family_parameter is None]
    assert len(interior) == 1
    fp = interior[0]
    assert fp.x02 == pytest.approx(0.2 * 0.05 / 0.05)
    assert fp.residual <= 1e-10
    assert abs(fp.state.as_vector().sum() - 1) <= 1e-9
    assert fp.state.y1 == pytest.approx(p.lam, abs=1e-9)


@given(st.floats(0.01, 0.26), st.integers(1, 3))
def test_tails_carry_lam_work(x02, d):
    p = Params(lam=0.6, alpha=0.2, beta=0.1, gamma=0.05, d=d)
    assert pod_tail(x02, p).sum() == pytest.approx(p.lam, abs=1e-12)
    q = p.replace(dispatch=Dispatch.JBT)
    tail = jbt_tail(x02, q)
    assert tail.size == d + 1
    x = state_for_x02(x02, q)
    assert np.abs(drift(x, q, blind(p.gamma * x02 / p.alpha))).max() <= 1e-10


@given(st.floats(0.01, 1.0), st.integers(0, 3))
def test_jbt_family_members_are_equilibria(frac, d):
    p = Params(lam=0.6, alpha=0.2, beta=0.1, gamma=0.05, d=d, dispatch=Dispatch.JBT)
    x = jbt_family(frac * p.lam, p)
    assert x.x01 == 0.0 and x.x02 == 0.0 and x.x00 == pytest.approx(1 - p.lam)
    assert x.y1 == pytest.approx(p.lam, abs=1e-9)
    assert np.abs(drift(x, p, prop4_rule(p))).max() <= 1e-10


def test_prop4_rule_has_a_continuum():
    p = Params(lam=0.6, alpha=0.2, beta=0.1, gamma=0.05, d=0, dispatch=Dispatch.JBT)
    found = find_fixed_points(prop4_rule(p), p, grid=50)
    assert len(found) > 1 and not any(f.unique for f in found)
    assert all(f.residual <= 1e-10 for f in found)


def test_rate_idle_fixed_point_is_optimal():
    p = ex.FIG2_PARAMS.replace(buffer=None)
    found = find_fixed_points(rate_idle(p), p)
    assert found and all(f.residual <= 1e-10 for f in found)
    opt = [f for f in found if f.family_parameter == pytest.approx(p.lam)]
    assert opt and opt[0].state.x12 == pytest.approx(p.lam)


def test_no_equilibrium_raises():
    zero = ScalingRule.from_expression("0")
    with pytest.raises(FixedPointError):
        solve_fixed_point(zero, FIG1)


def test_prop4_limits():
    scn = ex.scenario_prop4()
    p = scn.params
    assert scn.expected["qbar_limit"] == pytest.approx(7.8)
    assert scn.expected["qbar_limit_rule_rate"] == pytest.approx(6.6)
    # x00 = 0.5, x01 = 0.1, Qbar = 0.8: with excess -0.2 draining at rate a
    for a in (p.alpha, p.alpha / p.lam):
        assert ex.prop4_limit(scn.x0, p, a) == pytest.approx(0.8 + 0.2 * (a + 0.1) / (a * 0.1) + 1.0)


def test_blind_closed_form_validates_theta():
    with pytest.raises(ValueError):
        blind_pod1_closed_form(0.0, FIG1)
    x02, _ = blind_pod1_closed_form(1.0, FIG1)
    assert x02 == pytest.approx(0.24)
