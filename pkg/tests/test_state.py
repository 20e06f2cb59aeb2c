import numpy as np
import pytest
from hypothesis import given

from alba.state import (CountState, Dispatch, FluidState, Params, PowerCoeffs,
                        UndefinedMetricError, all_cold, minimal_dimensioning, optimal_state,
                        per_busy_queue, per_warm_queue, power, total_jobs, weighted_distance)

from .strategies import fluid_states


def test_params_validation():
    with pytest.raises(ValueError, match=r"lambda must lie in \(0,1\)"):
        Params(lam=1.2, alpha=0.1, beta=0.1, gamma=0.1)
    with pytest.raises(ValueError):
        Params(lam=0.5, alpha=0.1, beta=0.1, gamma=0.1, d=0, dispatch=Dispatch.POD)
    with pytest.raises(ValueError):
        Params(lam=0.5, alpha=0.1, beta=0.1, gamma=0.1, d=2, dispatch=Dispatch.JBT, buffer=2)
    for bad in ("alpha", "beta", "gamma"):
        with pytest.raises(ValueError):
            Params(**{"lam": 0.5, "alpha": 0.1, "beta": 0.1, "gamma": 0.1, bad: 0.0})
    p = Params(lam=0.5, alpha=0.1, beta=0.1, gamma=0.1, d=0, dispatch="jbt")
    assert p.is_jiq and p.buffer is None


def test_state_validation():
    with pytest.raises(ValueError):
        FluidState(0.5, 0.6, np.array([0.0, 0.0]))
    with pytest.raises(ValueError):
        FluidState(1.1, -0.1, np.array([0.0, 0.0]))
    x = FluidState.from_coords(4, x00=0.2, x01=0.1, x02=0.3, x12=0.25, x32=0.15)
    assert x.y0 == pytest.approx(0.7) and x.y1 == pytest.approx(0.4)
    assert x.y(3) == pytest.approx(0.15)
    assert total_jobs(x) == pytest.approx(0.25 + 3 * 0.15)
    wide = x.padded(10)
    assert wide.buffer == 10 and np.array_equal(wide.as_vector()[:7], x.as_vector())
    assert FluidState.from_vector(x.as_vector()) == x


def test_named_states_and_metrics():
    lam = 0.7
    xs = optimal_state(lam, 10)
    assert per_busy_queue(xs) == 1.0
    assert per_warm_queue(xs) == 1.0
    assert power(xs, PowerCoeffs(c12=2.0)) == pytest.approx(2 * lam)
    with pytest.raises(UndefinedMetricError):
        per_warm_queue(all_cold(5))
    with pytest.raises(UndefinedMetricError):
        per_busy_queue(minimal_dimensioning(lam, 5))


def test_weighted_distance_weights():
    a = all_cold(3)
    b = FluidState.from_coords(3, x00=0.0, x12=1.0)
    # coordinates x00 and x12 have weights 1 and 1/8
    assert weighted_distance(a, b) == pytest.approx(np.sqrt(1 + 1 / 8))


@given(fluid_states(), fluid_states(), fluid_states())
def test_weighted_distance_is_a_metric(x, y, z):
    assert weighted_distance(x, x) == 0.0
    assert weighted_distance(x, y) == pytest.approx(weighted_distance(y, x))
    assert weighted_distance(x, z) <= weighted_distance(x, y) + weighted_distance(y, z) + 1e-12
    if weighted_distance(x, y) == 0.0:
        assert x == y


@given(fluid_states(buffer=4))
def test_count_rounding(x):
    for N in (1, 7, 1000):
        c = CountState.from_fluid(x, N)
        assert c.N == N and c.buffer == x.buffer
        assert np.all(c.as_vector() >= 0)
        assert np.abs(c.as_vector() / N - x.as_vector()).max() <= 1.0 / N + 1e-12
