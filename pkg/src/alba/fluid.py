"""Fluid (mean-field) model: the discontinuous drift and a regime-aware integrator.

The drift is evaluated on the state vector ``(x00, x01, x02, x12, ..., xB2)``.
Its boundary branches are resolved with the tolerance ``EPS_REGIME``:

* cold boundary (``x00 <= eps``): when ``gamma*x02 <= alpha*g`` servers that
  expire are re-activated at once, so expirations flow straight to ``x01``;
* JBT with no warm server at or below the threshold: newly idle servers are
  filled immediately and the surplus demand spreads over busy servers;
* no warm server (``y0 <= eps``): servers finishing initialization receive a
  job immediately, at most ``lam`` of them per unit time, and land in class 1.

Integration is explicit Euler (default) or RK4 with the regime frozen at the
start of each step.  Every step is followed by a projection back onto the
simplex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .dispatch import (DISPATCH_EXHAUSTED, DISPATCH_NO_WARM, DISPATCH_NORMAL, EPS_REGIME)
from .rules import ScalingRule, eval_program_vector
from .state import Dispatch, FluidState, Params
from .trajectory import Trajectory, regime_label

MAX_TRUNCATION = 4096
OVERFLOW_TOL = 1e-9

COLD_INTERIOR, COLD_RECIRCULATING, COLD_DRAINING = 0, 1, 2


class TruncationOverflowError(RuntimeError):
    """Mass reached the last class of a truncated infinite buffer."""


@dataclass(frozen=True)
class IntegratorConfig:
    horizon: float
    step: float = 1e-3
    method: str = "euler"
    record_dt: float = 1.0
    eps: float = EPS_REGIME
    max_truncation: int = MAX_TRUNCATION

    def __post_init__(self):
        if self.method not in ("euler", "rk4"):
            raise ValueError(f"method must be 'euler' or 'rk4', got {self.method!r}")
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not self.step <= self.record_dt <= self.horizon:
            raise ValueError("need step <= record_dt <= horizon")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.step))

    @property
    def record_every(self) -> int:
        return max(1, int(round(self.record_dt / self.step)))


# --- kernels -----------------------------------------------------------------

@njit(cache=True)
def _dispatch_mode(v, d, jbt, eps):
    y0 = 0.0
    for i in range(2, v.shape[0]):
        y0 += v[i]
    if y0 <= eps:
        return DISPATCH_NO_WARM
    if not jbt:
        return DISPATCH_NORMAL
    below = 0.0
    for k in range(d + 1):
        below += v[2 + k]
    if below > eps:
        return DISPATCH_NORMAL
    return DISPATCH_EXHAUSTED


@njit(cache=True)
def _cold_mode(v, g, alpha, gamma, eps):
    if v[0] > eps:
        return COLD_INTERIOR
    if gamma * v[2] <= alpha * g:
        return COLD_RECIRCULATING
    return COLD_DRAINING


@njit(cache=True)
def _rates(v, lam, beta, d, jbt, mode, h):
    """Assignment rates for a given dispatch regime; ``h[0..B]``."""
    n = v.shape[0] - 2
    y0 = 0.0
    for i in range(n - 1, -1, -1):
        y0 += v[2 + i]
    x01 = v[1]
    if mode == DISPATCH_NO_WARM:
        # new warm servers are filled on arrival: inflow goes to class 1 only
        h[0] = min(beta * x01, lam)
        for i in range(1, n):
            h[i] = 0.0
        return
    if y0 <= 0.0:
        for i in range(n):
            h[i] = 0.0
        return
    if not jbt:
        upper = 0.0
        for i in range(n - 1, -1, -1):
            lower = upper + v[2 + i]
            a = min(lower / y0, 1.0)
            b = min(upper / y0, 1.0)
            h[i] = lam * (a ** d - b ** d)
            upper = lower
        return
    if mode == DISPATCH_NORMAL:
        below = 0.0
        for k in range(d + 1):
            below += v[2 + k]
        for i in range(n):
            if i <= d and below > 0.0:
                h[i] = lam * v[2 + i] / below
            else:
                h[i] = 0.0
        return
    xd1 = v[3 + d]
    inflow = xd1 + (d + 1) * beta * x01
    fits = inflow <= lam
    surplus = max(lam - inflow, 0.0)
    for i in range(n):
        if i <= d:
            h[i] = (beta * x01 + (xd1 if i == d else 0.0)) if fits else 0.0
        else:
            h[i] = v[2 + i] / y0 * surplus


@njit(cache=True)
def _drift(v, g, lam, alpha, beta, gamma, d, jbt, cold, disp, h, out):
    _rates(v, lam, beta, d, jbt, disp, h)
    n = v.shape[0] - 2
    B = n - 1
    x02 = v[2]
    scale = 0.0
    recirc = 0.0
    if cold == COLD_INTERIOR:
        scale = alpha * g
    elif cold == COLD_RECIRCULATING:
        recirc = gamma * x02
    out[0] = gamma * x02 - scale - recirc
    out[1] = scale - beta * v[1] + recirc
    out[2] = v[3] - h[0] + beta * v[1] - gamma * x02
    for i in range(1, n):
        r = -v[2 + i] + h[i - 1]
        if i < B:
            r += v[3 + i] - h[i]
        out[2 + i] = r


@njit(cache=True)
def drift_kernel(v, g, lam, alpha, beta, gamma, d, jbt, eps, out):
    """Drift with regimes detected at ``v``; returns the combined regime code."""
    h = np.empty(v.shape[0] - 2)
    cold = _cold_mode(v, g, alpha, gamma, eps)
    disp = _dispatch_mode(v, d, jbt, eps)
    _drift(v, g, lam, alpha, beta, gamma, d, jbt, cold, disp, h, out)
    return 3 * cold + disp


@njit(cache=True)
def _project(v):
    """Return a step's overshoot to where it came from, then restore unit mass."""
    n = v.shape[0]
    if v[0] < 0.0:
        # only the scaling flux drains x00: give the excess back from x01
        v[1] += v[0]
        v[0] = 0.0
    for k in range(2, n - 1):
        if v[k] < 0.0:
            # overshoot of the assignment flux out of class k
            v[k + 1] += v[k]
            v[k] = 0.0
    total = 0.0
    for k in range(n):
        if v[k] < 0.0:
            v[k] = 0.0
        total += v[k]
    resid = 1.0 - total
    if v[0] + resid >= 0.0:
        v[0] += resid
    else:
        for k in range(n):
            v[k] /= total


@njit(cache=True)
def _g_at(v, ops, consts, g_fixed):
    if ops.shape[0] == 0:
        return g_fixed
    return eval_program_vector(ops, consts, v)


@njit(cache=True)
def _step(v, dt, lam, alpha, beta, gamma, d, jbt, eps, ops, consts, g_fixed, rk4, work):
    """Advance ``v`` in place by one step; returns (regime code, g at step start)."""
    n = v.shape[0]
    h = work[0, : n - 2]
    k1 = work[1]
    g = _g_at(v, ops, consts, g_fixed)
    cold = _cold_mode(v, g, alpha, gamma, eps)
    disp = _dispatch_mode(v, d, jbt, eps)
    _drift(v, g, lam, alpha, beta, gamma, d, jbt, cold, disp, h, k1)
    if not rk4:
        for i in range(n):
            v[i] += dt * k1[i]
    else:
        k2 = work[2]
        k3 = work[3]
        k4 = work[4]
        tmp = work[5]
        for i in range(n):
            tmp[i] = v[i] + 0.5 * dt * k1[i]
        _drift(tmp, _g_at(tmp, ops, consts, g_fixed), lam, alpha, beta, gamma, d, jbt, cold, disp, h, k2)
        for i in range(n):
            tmp[i] = v[i] + 0.5 * dt * k2[i]
        _drift(tmp, _g_at(tmp, ops, consts, g_fixed), lam, alpha, beta, gamma, d, jbt, cold, disp, h, k3)
        for i in range(n):
            tmp[i] = v[i] + dt * k3[i]
        _drift(tmp, _g_at(tmp, ops, consts, g_fixed), lam, alpha, beta, gamma, d, jbt, cold, disp, h, k4)
        for i in range(n):
            v[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    _project(v)
    return 3 * cold + disp, g


@njit(cache=True)
def _integrate(v, n_steps, dt, every, lam, alpha, beta, gamma, d, jbt, eps, ops, consts,
               rk4, check_overflow, overflow_tol, states, gs, regimes, busy, switches):
    """Run the integrator; returns (status, step index reached). Status 1 = overflow."""
    n = v.shape[0]
    work = np.zeros((6, n))
    busy_acc = 0.0
    rec = 0
    last_code = -1
    sw = 0
    for k in range(n_steps + 1):
        y1 = 0.0
        for i in range(3, n):
            y1 += v[i]
        if k % every == 0:
            g0 = _g_at(v, ops, consts, 0.0)
            for i in range(n):
                states[rec, i] = v[i]
            gs[rec] = g0
            regimes[rec] = 3 * _cold_mode(v, g0, alpha, gamma, eps) + _dispatch_mode(v, d, jbt, eps)
            busy[rec] = busy_acc
            switches[rec] = sw
            sw = 0
            rec += 1
        if check_overflow and v[n - 1] > overflow_tol:
            return 1, k
        if k == n_steps:
            break
        code, _ = _step(v, dt, lam, alpha, beta, gamma, d, jbt, eps, ops, consts, 0.0, rk4, work)
        if code != last_code:
            if last_code >= 0:
                sw += 1
            last_code = code
        busy_acc += dt * y1
    return 0, n_steps


# --- Python API ----------------------------------------------------------------

def drift(x: FluidState, p: Params, rule: ScalingRule, eps: float = EPS_REGIME) -> np.ndarray:
    """Fluid drift ``F(x)`` in the vector layout ``(x00, x01, x02, x12, ...)``."""
    v = x.as_vector()
    out = np.zeros_like(v)
    drift_kernel(v, rule.evaluate(x), p.lam, p.alpha, p.beta, p.gamma, p.d,
                 p.dispatch is Dispatch.JBT, eps, out)
    return out


def regime_code(x: FluidState, p: Params, rule: ScalingRule, eps: float = EPS_REGIME) -> int:
    v = x.as_vector()
    g = rule.evaluate(x)
    return 3 * _cold_mode(v, g, p.alpha, p.gamma, eps) + _dispatch_mode(
        v, p.d, p.dispatch is Dispatch.JBT, eps)


def regime(x: FluidState, p: Params, rule: ScalingRule, eps: float = EPS_REGIME) -> str:
    """Label of the drift branch active at ``x``."""
    return regime_label(regime_code(x, p, rule, eps))


_EMPTY_OPS = np.zeros((0, 2), dtype=np.int64)
_EMPTY_CONSTS = np.zeros(1)


def _integrate_python(v, cfg, p, rule, jbt, states, gs, regimes, busy, switches):
    """Step-by-step loop for rules backed by a Python callable."""
    n = v.size
    work = np.zeros((6, n))
    every = cfg.record_every
    busy_acc, rec, last, sw = 0.0, 0, -1, 0
    for k in range(cfg.n_steps + 1):
        y1 = v[3:].sum()
        if k % every == 0:
            g0 = rule.evaluate_vector(v)
            states[rec] = v
            gs[rec] = g0
            regimes[rec] = 3 * _cold_mode(v, g0, p.alpha, p.gamma, cfg.eps) + _dispatch_mode(
                v, p.d, jbt, cfg.eps)
            busy[rec] = busy_acc
            switches[rec] = sw
            sw = 0
            rec += 1
        if p.buffer is None and v[-1] > OVERFLOW_TOL:
            return 1, k
        if k == cfg.n_steps:
            break
        if cfg.method == "euler":
            code, _ = _step(v, cfg.step, p.lam, p.alpha, p.beta, p.gamma, p.d, jbt, cfg.eps,
                            _EMPTY_OPS, _EMPTY_CONSTS, rule.evaluate_vector(v), False, work)
        else:
            code = _rk4_python(v, cfg, p, rule, jbt)
        if code != last:
            sw += last >= 0
            last = code
        busy_acc += cfg.step * y1
    return 0, cfg.n_steps


def _rk4_python(v, cfg, p, rule, jbt):
    n = v.size
    h = np.zeros(n - 2)
    g = rule.evaluate_vector(v)
    cold = _cold_mode(v, g, p.alpha, p.gamma, cfg.eps)
    disp = _dispatch_mode(v, p.d, jbt, cfg.eps)
    args = (p.lam, p.alpha, p.beta, p.gamma, p.d, jbt, cold, disp, h)
    ks = []
    for c in (0.0, 0.5, 0.5, 1.0):
        tmp = v + c * cfg.step * ks[-1] if ks else v.copy()
        k = np.zeros(n)
        _drift(tmp, rule.evaluate_vector(np.clip(tmp, 0, None)), *args, k)
        ks.append(k)
    v += cfg.step / 6.0 * (ks[0] + 2 * ks[1] + 2 * ks[2] + ks[3])
    _project(v)
    return 3 * cold + disp


def integrate(x0: FluidState, p: Params, rule: ScalingRule, cfg: IntegratorConfig) -> Trajectory:
    """Integrate the fluid model from ``x0``.

    With an infinite buffer the state is truncated; whenever mass above
    ``OVERFLOW_TOL`` reaches the last class the run restarts with twice the
    truncation, up to ``cfg.max_truncation``.
    """
    jbt = p.dispatch is Dispatch.JBT
    if p.buffer is not None:
        if x0.buffer > p.buffer:
            raise ValueError(f"initial state has buffer {x0.buffer} > B = {p.buffer}")
        B = p.buffer
    else:
        B = max(p.truncation(), x0.buffer)
    n_rec = cfg.n_steps // cfg.record_every + 1
    while True:
        v = x0.padded(B).as_vector()
        width = v.size
        states = np.zeros((n_rec, width))
        gs = np.zeros(n_rec)
        regimes = np.zeros(n_rec, dtype=np.int64)
        busy = np.zeros(n_rec)
        switches = np.zeros(n_rec, dtype=np.int64)
        if rule.compiled:
            ops, consts = rule.program
            status, reached = _integrate(
                v, cfg.n_steps, cfg.step, cfg.record_every, p.lam, p.alpha, p.beta, p.gamma,
                p.d, jbt, cfg.eps, ops, consts, cfg.method == "rk4", p.buffer is None,
                OVERFLOW_TOL, states, gs, regimes, busy, switches)
        else:
            status, reached = _integrate_python(v, cfg, p, rule, jbt, states, gs, regimes,
                                                busy, switches)
        if status == 0:
            break
        if B * 2 > cfg.max_truncation:
            raise TruncationOverflowError(
                f"mass {v[-1]:.3g} reached truncation B={B} at t={reached * cfg.step:.6g}; "
                f"limit {cfg.max_truncation}")
        B *= 2
    times = np.arange(n_rec) * cfg.record_every * cfg.step
    every = cfg.record_every
    chatter = switches >= max(2, every // 2)
    return Trajectory(times, states, g=gs, regimes=regimes, busy_time=busy,
                      meta={"kind": "fluid", "buffer": B, "step": cfg.step, "method": cfg.method,
                            "regime_switches": switches, "chattering": chatter})
