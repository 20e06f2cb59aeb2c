"""Fixed points of the fluid model with an infinite buffer.

With ``x01 = gamma * x02 / beta`` and ``x00 = 1 - lam - (gamma/beta + 1) x02``
the warm tail is a function of ``x02`` alone (Power-of-d always, JBT-d when
``x02 > 0``), so equilibria reduce to the scalar equation

    gamma * x02 = alpha * g(x(x02)),     0 < x02 <= x02_ref

with ``x02_ref = beta (1 - lam) / (beta + gamma)``; when the scaling rule is
strong enough at the reference point, that point (no cold servers) is the
unique equilibrium.  JBT-d also has equilibria with no idle-on server, a
one-parameter family indexed by ``x_{d+1,2}``, wherever the rule vanishes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fluid import drift
from .rules import ScalingRule
from .state import Dispatch, FluidState, Params, per_warm_queue

TAIL_CUTOFF = 1e-15
MAX_TAIL = 200_000
ZERO_TOL = 1e-12


class FixedPointError(RuntimeError):
    pass


@dataclass(frozen=True)
class FixedPoint:
    state: FluidState
    saturated: bool
    residual: float
    family_parameter: float | None = None
    unique: bool = True

    @property
    def x02(self) -> float:
        return self.state.x02


def _assemble(x00: float, x01: float, x02: float, tail) -> FluidState:
    x2 = np.concatenate(([x02], np.asarray(tail, dtype=float)))
    if x2.size < 2:
        x2 = np.append(x2, 0.0)
    return FluidState(max(x00, 0.0), x01, x2, tol=1e-9)


def solve_zd(x02: float, p: Params, tol: float = 1e-12) -> float:
    """Proportion of busy servers with at most ``d`` jobs at a JBT-d equilibrium.

    Root in [0, 1] of ``z + x02 = x02 * sum_{k=0..d} (lam / (z + x02))^k``,
    found by bisection.
    """
    d = p.d
    if d == 0:
        return 0.0
    if not 0.0 < x02 <= 1.0 - p.lam + 1e-12:
        raise ValueError(f"x02 must lie in (0, 1-lam], got {x02}")

    def resid(z):
        r = p.lam / (z + x02)
        return z + x02 - x02 * sum(r**k for k in range(d + 1))

    lo, hi = 0.0, 1.0
    flo, fhi = resid(lo), resid(hi)
    if flo > 0 or fhi < 0:
        raise FixedPointError(f"no sign change for z_d on [0,1]: {flo}, {fhi}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = resid(mid)
        if abs(fm) <= tol or hi - lo < 1e-16:
            return mid
        if fm < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _pod_exponent(d: int, i: int) -> float:
    # (d^i - 1)/(d - 1), equal to i in the d = 1 limit
    return float(i) if d == 1 else (d**i - 1) / (d - 1)


def pod_tail(x02: float, p: Params) -> np.ndarray:
    """Warm tail ``x_{i,2}, i >= 1`` of a Power-of-d equilibrium."""
    if x02 <= 0.0:
        raise ValueError("Power-of-d equilibria need x02 > 0")
    lam, d = p.lam, p.d
    top = lam + x02
    log_rho = math.log(lam / top)
    tail = []
    i = 1
    while i < MAX_TAIL:
        e0 = _pod_exponent(d, i)
        e1 = _pod_exponent(d, i + 1)
        term = top * (math.exp(e0 * log_rho) - math.exp(e1 * log_rho))
        if term < TAIL_CUTOFF and (d > 1 or top * math.exp(e1 * log_rho) < TAIL_CUTOFF):
            break
        tail.append(term)
        i += 1
    return np.array(tail)


def jbt_tail(x02: float, p: Params) -> np.ndarray:
    """Warm tail of a JBT-d equilibrium with idle-on servers; support ``1..d+1``."""
    if x02 <= 0.0:
        raise ValueError("x02 must be positive; use jbt_family for x02 = 0")
    z = solve_zd(x02, p)
    r = p.lam / (z + x02)
    return x02 * r ** np.arange(1, p.d + 2)


def _tail(x02: float, p: Params) -> np.ndarray:
    return pod_tail(x02, p) if p.dispatch is Dispatch.POD else jbt_tail(x02, p)


def x02_reference(p: Params) -> float:
    return p.beta * (1.0 - p.lam) / (p.beta + p.gamma)


def reference_point_x_circ(p: Params) -> FluidState:
    """The equilibrium candidate without cold servers."""
    x02 = x02_reference(p)
    x01 = p.gamma * (1.0 - p.lam) / (p.beta + p.gamma)
    return _assemble(0.0, x01, x02, _tail(x02, p))


def state_for_x02(x02: float, p: Params) -> FluidState:
    """Equilibrium-shaped state parameterized by its idle-on mass."""
    x01 = p.gamma * x02 / p.beta
    x00 = 1.0 - p.lam - x01 - x02
    return _assemble(x00, x01, x02, _tail(x02, p))


def _compact_state(x02: float, p: Params) -> FluidState:
    """State with the same aggregates as ``state_for_x02``, tail lumped into class 2.

    Scaling rules only read ``x00, x01, x02, x12, y0, y1``, so they agree on both.
    """
    x01 = p.gamma * x02 / p.beta
    x00 = max(1.0 - p.lam - x01 - x02, 0.0)
    if p.dispatch is Dispatch.POD:
        rho = p.lam / (p.lam + x02)
        x12 = (p.lam + x02) * (rho - rho ** _pod_exponent(p.d, 2))
    else:
        x12 = float(jbt_tail(x02, p)[0])
    # y1 = lam at every equilibrium candidate
    rest = max(1.0 - x00 - x01 - x02 - x12, 0.0)
    return FluidState(x00, x01, np.array([x02, x12, rest]), tol=1e-9)


def saturation_threshold(p: Params) -> float:
    """``(1 - lam) / (1/beta + 1/gamma)``: the critical value of ``alpha * g(x_ref)``."""
    return (1.0 - p.lam) / (1.0 / p.beta + 1.0 / p.gamma)


def is_saturated(rule: ScalingRule, p: Params) -> bool:
    """True when no cold server remains at equilibrium."""
    return p.alpha * rule.evaluate(reference_point_x_circ(p)) >= saturation_threshold(p)


def jbt_family(x_d1: float, p: Params) -> FluidState:
    """Member of the JBT-d equilibrium family without idle-on servers."""
    lam, d = p.lam, p.d
    if not 0.0 < x_d1 <= lam:
        raise ValueError(f"x_(d+1),2 must lie in (0, lam], got {x_d1}")
    ratio = 1.0 - x_d1 / lam
    tail = [x_d1]
    while ratio > 0.0 and tail[-1] * ratio >= TAIL_CUTOFF and len(tail) < MAX_TAIL:
        tail.append(tail[-1] * ratio)
    x2 = np.zeros(d + 1 + len(tail) + 1)
    x2[d + 1: d + 1 + len(tail)] = tail
    return FluidState(1.0 - lam, 0.0, x2, tol=1e-9)


def _residual(x: FluidState, p: Params, rule: ScalingRule) -> float:
    return float(np.max(np.abs(drift(x, p.replace(buffer=None), rule))))


def _make(x: FluidState, p: Params, rule: ScalingRule, **kw) -> FixedPoint:
    return FixedPoint(state=x, saturated=x.x00 <= ZERO_TOL, residual=_residual(x, p, rule), **kw)


def _bisect(f, lo, hi, flo, tol=1e-15):
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0 or hi - lo <= tol * max(1.0, hi):
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def find_fixed_points(rule: ScalingRule, p: Params, grid: int = 1000) -> list[FixedPoint]:
    """All equilibria found by scanning ``x02`` (and, for JBT, the ``x02 = 0`` family)."""
    x02_ref = x02_reference(p)
    if is_saturated(rule, p):
        return [_make(reference_point_x_circ(p), p, rule)]

    def phi(x02):
        return p.gamma * x02 - p.alpha * rule.evaluate(_compact_state(x02, p))

    pts = np.linspace(ZERO_TOL, x02_ref, grid + 1)
    vals = np.array([phi(s) for s in pts])
    roots = []
    for k in range(grid):
        a, b = vals[k], vals[k + 1]
        if a == 0.0:
            roots.append(pts[k])
        elif a * b < 0:
            roots.append(_bisect(phi, pts[k], pts[k + 1], a))
    found = [_make(state_for_x02(r, p), p, rule) for r in roots]

    if p.dispatch is Dispatch.JBT:
        members = np.linspace(p.lam / grid, p.lam, grid)
        zero = [a for a in members if rule.evaluate(jbt_family(a, p)) <= ZERO_TOL]
        if len(zero) == 1:
            found.append(_make(jbt_family(zero[0], p), p, rule, family_parameter=zero[0]))
        elif zero:
            # a continuum: report the sampled members
            found.extend(_make(jbt_family(a, p), p, rule, family_parameter=a) for a in zero)
    if len(found) > 1:
        found = [FixedPoint(f.state, f.saturated, f.residual, f.family_parameter, unique=False)
                 for f in found]
    return found


def solve_fixed_point(rule: ScalingRule, p: Params, grid: int = 1000) -> FixedPoint:
    """The equilibrium of the fluid model; ``unique`` is False when several were found.

    Raises :class:`FixedPointError` when the rule admits none in the searched set.
    """
    found = find_fixed_points(rule, p, grid)
    if not found:
        raise FixedPointError("no equilibrium found: no interior root and not saturated")
    return found[0]


def blind_pod1_closed_form(theta: float, p: Params) -> tuple[float, float]:
    """Idle-on mass and jobs per warm server at the Blind-theta / random-dispatch equilibrium."""
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0,1]")
    x02 = min(p.alpha * theta / p.gamma, x02_reference(p))
    return x02, p.lam / x02


def q_warm_at(fp: FixedPoint) -> float:
    return per_warm_queue(fp.state)
