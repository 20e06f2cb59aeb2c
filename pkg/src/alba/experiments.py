"""Scenario runners, the cost functional and the queue-constraint search."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ctmc import SimConfig, replicate
from .fixed_point import jbt_family
from .fluid import IntegratorConfig, integrate
from .rules import ScalingRule, blind, eta_rule, prop4_rule, rate_idle, satisfies_optimality_condition
from .state import (CountState, Dispatch, FluidState, Params, PowerCoeffs, UndefinedMetricError,
                    all_cold, minimal_dimensioning, optimal_state, total_jobs,
                    weighted_distance, weighted_distance_arrays)
from .trajectory import Trajectory

TAIL_FRACTION = 0.2
STATIONARY_TOL = 0.01


@dataclass
class Scenario:
    """A fully specified run: model, rule, start, horizon and numerical settings."""

    name: str
    params: Params
    rule: ScalingRule
    x0: FluidState
    horizon: float
    description: str = ""
    N: int = 1000
    replications: int = 10
    sample_dt: float = 1.0
    step: float = 0.01
    record_dt: float = 1.0
    seed: int = 0
    expected: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.x0, FluidState):
            raise TypeError("x0 must be a FluidState")
        if self.params.buffer is not None and self.x0.buffer > self.params.buffer:
            raise ValueError("initial state does not fit the buffer")

    @property
    def counts(self) -> CountState:
        return CountState.from_fluid(self.x0, self.N)

    def integrator(self, **changes) -> IntegratorConfig:
        kw = dict(horizon=self.horizon, step=self.step, record_dt=self.record_dt)
        kw.update(changes)
        return IntegratorConfig(**kw)

    def sim_config(self, **changes) -> SimConfig:
        kw = dict(N=self.N, horizon=self.horizon, seed=self.seed, sample_dt=self.sample_dt,
                  replications=self.replications)
        kw.update(changes)
        return SimConfig(**kw)


def run_fluid(scn: Scenario, **changes) -> Trajectory:
    return integrate(scn.x0, scn.params, scn.rule, scn.integrator(**changes))


def run_stochastic(scn: Scenario, **changes) -> Trajectory:
    return replicate(scn.params, scn.rule, scn.sim_config(**changes), scn.counts)


def sup_distance(a: Trajectory, b: Trajectory) -> float:
    """Largest weighted distance between two trajectories at their common sample times."""
    ta, tb = np.round(a.times, 9), np.round(b.times, 9)
    common, ia, ib = np.intersect1d(ta, tb, return_indices=True)
    if common.size == 0:
        raise ValueError("trajectories share no sample time")
    width = max(a.states.shape[1], b.states.shape[1])
    sa = np.zeros((common.size, width))
    sb = np.zeros((common.size, width))
    sa[:, : a.states.shape[1]] = a.states[ia]
    sb[:, : b.states.shape[1]] = b.states[ib]
    return float(weighted_distance_arrays(sa, sb).max())


# --- cost and constraint ----------------------------------------------------

def _window(traj: Trajectory, window) -> tuple[np.ndarray, np.ndarray]:
    t0, t1 = window
    if not t1 > t0:
        raise ValueError("window must satisfy t1 > t0")
    if t0 < traj.times[0] - 1e-9 or t1 > traj.times[-1] + 1e-9:
        raise ValueError(f"window [{t0}, {t1}] outside the trajectory range")
    mask = (traj.times >= t0 - 1e-9) & (traj.times <= t1 + 1e-9)
    return traj.times[mask], traj.states[mask]


def _busy_queue_rows(states: np.ndarray) -> np.ndarray:
    y1 = states[:, 3:].sum(axis=1)
    if np.any(y1 <= 0.0):
        raise UndefinedMetricError("no busy servers in the window: jobs per busy server is undefined")
    jobs = states[:, 2:] @ np.arange(states.shape[1] - 2)
    return jobs / y1


def cost_J(traj: Trajectory, c: PowerCoeffs, window) -> float:
    """Time average of ``kappa1 * P + kappa2 * Q`` over ``window`` (trapezoid rule).

    ``P = c01 x01 + c02 x02 + c12 y1`` and ``Q`` is the number of jobs per busy server.
    """
    t, s = _window(traj, window)
    if t.size < 2:
        raise ValueError("window holds fewer than two samples")
    P = c.c01 * s[:, 1] + c.c02 * s[:, 2] + c.c12 * s[:, 3:].sum(axis=1)
    f = c.kappa1 * P + c.kappa2 * _busy_queue_rows(s)
    return float(np.trapezoid(f, t) / (t[-1] - t[0]))


def max_queue(traj: Trajectory) -> float:
    """Largest number of jobs per busy server over the recorded times."""
    return float(_busy_queue_rows(traj.states).max())


def long_run_average(traj: Trajectory, values: np.ndarray, fraction: float = TAIL_FRACTION
                     ) -> tuple[float, bool]:
    """Mean of ``values`` over the last ``fraction`` of the horizon.

    The flag tells whether the two halves of that window agree within 1%.
    """
    t = traj.times
    start = t[-1] - fraction * (t[-1] - t[0])
    mask = t >= start
    v, tt = np.asarray(values)[mask], t[mask]
    mean = float(np.trapezoid(v, tt) / (tt[-1] - tt[0]))
    half = v.size // 2
    a, b = v[:half].mean(), v[half:].mean()
    stationary = abs(a - b) <= STATIONARY_TOL * max(abs(a), abs(b), 1e-300)
    return mean, bool(stationary)


def jiq_derivative_error(traj: Trajectory, lam: float) -> np.ndarray:
    """``|dQbar/dt - (lam - y1)|`` on each recording interval.

    Both sides are interval averages: the change of the total number of jobs
    against ``lam`` minus the recorded service integral.
    """
    if traj.busy_time is None:
        raise ValueError("trajectory carries no service integral")
    dt = np.diff(traj.times)
    dq = np.diff(traj.total_jobs) / dt
    served = np.diff(traj.busy_time) / dt
    return np.abs(dq - (lam - served))


# --- eta search ---------------------------------------------------------------

@dataclass(frozen=True)
class EtaSearch:
    eta: float | None
    feasible: bool
    monotone: bool
    max_queue: float | None
    grid: tuple = ()

    def as_dict(self) -> dict:
        return {"eta": self.eta, "feasible": self.feasible, "monotone": self.monotone,
                "max_queue": self.max_queue,
                "grid": [{"eta": e, "max_queue": q} for e, q in self.grid]}


def find_min_eta(p: Params, q: float, x0: FluidState, search=(1e-3, 1e3), horizon: float = 500.0,
                 step: float = 0.01, record_dt: float = 0.1, points: int = 13,
                 rel_tol: float = 1e-3) -> EtaSearch:
    """Smallest ``eta`` whose fluid trajectory keeps jobs per busy server at or below ``q``.

    A geometric grid over ``search`` first checks that the maximum queue does not
    increase with ``eta``.  If so, bisection (in log scale) refines the first
    feasible grid point to ``rel_tol``; otherwise the first feasible grid point
    is returned with ``monotone=False``.
    """
    lo, hi = search
    if not 0 < lo < hi:
        raise ValueError("search bracket must satisfy 0 < eta_lo < eta_hi")
    cfg = IntegratorConfig(horizon=horizon, step=step, record_dt=record_dt)
    cache = {}

    def mq(eta):
        if eta not in cache:
            cache[eta] = max_queue(integrate(x0, p, eta_rule(eta, p), cfg))
        return cache[eta]

    grid = np.geomspace(lo, hi, points)
    values = [mq(float(e)) for e in grid]
    table = tuple((float(e), v) for e, v in zip(grid, values))
    monotone = all(b <= a * (1 + 1e-9) for a, b in zip(values, values[1:]))
    feasible = [k for k, v in enumerate(values) if v <= q]
    if not feasible:
        return EtaSearch(None, False, monotone, None, table)
    k = feasible[0]
    if not monotone or k == 0:
        return EtaSearch(float(grid[k]), True, monotone, values[k], table)
    a, b = float(grid[k - 1]), float(grid[k])
    while (b - a) > rel_tol * b:
        mid = math.sqrt(a * b)
        if mq(mid) <= q:
            b = mid
        else:
            a = mid
    return EtaSearch(b, True, monotone, mq(b), table)


# --- named scenarios ---------------------------------------------------------

def fig1_theta(p: Params) -> float:
    """Half the scaling probability that would just saturate the system."""
    return (0.5 / p.alpha) * (1.0 - p.lam) / (1.0 / p.beta + 1.0 / p.gamma)


def scenario_fig1() -> Scenario:
    p = Params(lam=0.7, alpha=0.05, beta=0.1, gamma=0.025, d=1, dispatch=Dispatch.POD, buffer=100)
    theta = fig1_theta(p)
    x02 = p.alpha * theta / p.gamma
    return Scenario(
        name="fig1", params=p, rule=blind(theta), x0=minimal_dimensioning(p.lam, p.buffer),
        horizon=5000.0, N=1000, replications=10,
        description="Blind-theta scaling with random dispatching from the minimal dimensioning",
        expected={"theta": theta, "x02": x02, "x01": p.gamma * x02 / p.beta,
                  "x00": 1.0 - p.lam - x02 - p.gamma * x02 / p.beta, "q_warm": p.lam / x02,
                  "sup_dw": 0.05, "x02_tol": 1e-3})


FIG2_PARAMS = Params(lam=0.5, alpha=0.35, beta=0.1, gamma=0.025, d=0, dispatch=Dispatch.JBT,
                     buffer=100)


def scenario_fig2(eta: float = 1.0) -> Scenario:
    if not eta > 0:
        raise ValueError("eta must be positive")
    p = FIG2_PARAMS
    # stationary at the optimum for the previous load 0.25, then the load doubles
    x0 = FluidState.from_coords(p.buffer, x00=0.70, x02=0.05, x12=0.25)
    return Scenario(
        name="fig2", params=p, rule=eta_rule(eta, p), x0=x0, horizon=500.0, N=1000,
        replications=10, record_dt=0.1, sample_dt=0.1,
        description=f"load step from 0.25 to 0.5 under JIQ and the eta rule (eta={eta:g})",
        expected={"q": 2.0, "q_limit": 1.0, "q_limit_tol": 0.02})


def prop4_limit(x0: FluidState, p: Params, rate: float | None = None) -> float:
    """Limit of the total number of jobs per server when cold mass drains at ``rate``.

    ``rate`` defaults to ``alpha``; the excess of cold servers over ``1 - lam``
    decays exponentially at that rate and initializing servers at rate ``beta``.
    """
    a = p.alpha if rate is None else rate
    excess = x0.x00 - 1.0 + p.lam
    return total_jobs(x0) + (a + p.beta) / (a * p.beta) * excess + x0.x01 / p.beta


def scenario_prop4() -> Scenario:
    p = Params(lam=0.7, alpha=0.05, beta=0.1, gamma=0.025, d=0, dispatch=Dispatch.JBT, buffer=None)
    x0 = FluidState.from_coords(p.truncation(), x00=0.5, x01=0.1, x22=0.4)
    return Scenario(
        name="prop4", params=p, rule=prop4_rule(p), x0=x0, horizon=2000.0, N=1000,
        replications=10,
        description="scaling that stops once cold servers reach 1 - lam, started in underload",
        expected={"qbar_limit": prop4_limit(x0, p),
                  # the rule as stated drains cold mass at rate alpha / lam
                  "qbar_limit_rule_rate": prop4_limit(x0, p, p.alpha / p.lam),
                  "qbar_tol": 0.01, "y0_gap": 1e-3})


def th3_initial_states(p: Params) -> dict[str, FluidState]:
    B = p.buffer if p.buffer is not None else p.truncation()
    family = jbt_family(p.lam / 2.0, p.replace(d=0))
    return {
        "all_cold": all_cold(B),
        "optimal": optimal_state(p.lam, B),
        "minimal_dimensioning": minimal_dimensioning(p.lam, B),
        "jbt_family_half": family.padded(max(B, family.buffer)),
        "fig2_start": FluidState.from_coords(B, x00=0.70, x02=0.05, x12=0.25),
    }


def scenario_th3() -> Scenario:
    p = FIG2_PARAMS
    return Scenario(
        name="th3", params=p, rule=rate_idle(p), x0=all_cold(p.buffer), horizon=2000.0, N=1000,
        replications=10,
        description="convergence to the optimal point under JIQ from several starts",
        expected={"distance": 1e-3, "cost_rel_tol": 0.02})


@dataclass
class ConvergenceRun:
    start: str
    rule: str
    distance: float
    cost: float
    cost_stationary: bool
    trajectory: Trajectory


def scenario_th3_convergence(x0_set: dict[str, FluidState] | None = None, p: Params | None = None,
                             horizon: float = 2000.0, step: float = 0.01, record_dt: float = 1.0,
                             coeffs: PowerCoeffs = PowerCoeffs()) -> list[ConvergenceRun]:
    """Integrate each start under Rate-Idle and under the eta rule with eta = 1.

    Reports the weighted distance from the optimal point at the horizon and the
    tail-window cost.
    """
    p = p or FIG2_PARAMS
    if p.dispatch is not Dispatch.JBT or p.d != 0:
        raise ValueError("convergence to the optimum is stated for JIQ")
    if not p.beta < 1:
        raise ValueError("convergence to the optimum needs beta < 1")
    starts = x0_set if x0_set is not None else th3_initial_states(p)
    cfg = IntegratorConfig(horizon=horizon, step=step, record_dt=record_dt)
    runs = []
    for rule in (rate_idle(p), eta_rule(1.0, p)):
        report = satisfies_optimality_condition(rule, p)
        if not report.passed:
            raise ValueError(f"rule {rule.name} violates the optimality condition")
        for name, x0 in starts.items():
            traj = integrate(x0, p, rule, cfg)
            final = traj.final()
            target = optimal_state(p.lam, final.buffer)
            t1 = traj.times[-1]
            cost = cost_J(traj, coeffs, ((1 - TAIL_FRACTION) * t1, t1))
            q = traj.q_busy()
            P = coeffs.c01 * traj.x01 + coeffs.c02 * traj.x02 + coeffs.c12 * traj.y1
            _, stationary = long_run_average(traj, coeffs.kappa1 * P + coeffs.kappa2 * q)
            runs.append(ConvergenceRun(name, rule.name, weighted_distance(final, target), cost,
                                       stationary, traj))
    return runs


def optimal_cost(p: Params, c: PowerCoeffs) -> float:
    """The lower bound ``kappa1 * c12 * lam + kappa2`` on the long-run cost."""
    return c.kappa1 * c.c12 * p.lam + c.kappa2


SCENARIOS = {"fig1": scenario_fig1, "fig2": scenario_fig2, "prop4": scenario_prop4,
             "th3": scenario_th3}
