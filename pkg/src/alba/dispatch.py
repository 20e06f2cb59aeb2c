"""Dispatching: Power-of-d and Join-Below-Threshold-d (JBT-d, JIQ when d = 0).

Two views of the same rule:

* ``pod_probs`` / ``jbt_probs`` give the probability that an arriving job
  joins a warm server with ``i`` jobs (stochastic model);
* ``fluid_rates`` gives the assignment rates ``h_i`` of the fluid model,
  including its boundary branches.

Vectors are indexed ``i = 0..B``.  The entry at ``B`` is the share sent to a
full server, i.e. rejected; the fluid drift never credits it to anyone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .state import CountState, Dispatch, FluidState, Params

#: Regime tolerance: masses at or below this are treated as zero.
EPS_REGIME = 1e-9

#: Outcomes of ``sample_dispatch`` other than a queue class.
LOST = -1
REJECTED = -2

# dispatch regimes reported by ``fluid_rates_kernel``
DISPATCH_NORMAL = 0
DISPATCH_EXHAUSTED = 1   # JBT with no warm server at or below the threshold
DISPATCH_NO_WARM = 2


class NoWarmServerError(ValueError):
    """Dispatch probabilities were requested on a state without warm servers."""


@dataclass(frozen=True)
class DispatchKernel:
    discipline: Dispatch
    d: int

    def __post_init__(self):
        object.__setattr__(self, "discipline", Dispatch(self.discipline))
        if self.discipline is Dispatch.POD and self.d < 1:
            raise ValueError("Power-of-d requires d >= 1")
        if self.discipline is Dispatch.JBT and self.d < 0:
            raise ValueError("JBT-d requires d >= 0")

    @classmethod
    def from_params(cls, p: Params) -> "DispatchKernel":
        return cls(p.dispatch, p.d)

    @property
    def jbt(self) -> bool:
        return self.discipline is Dispatch.JBT


def pod_probs(x: FluidState, d: int) -> np.ndarray:
    """``f_i = (y_i^d - y_{i+1}^d) / y_0^d`` with selections made with replacement."""
    y0 = x.y0
    if y0 <= 0.0:
        raise NoWarmServerError("no warm server: the job is lost")
    # suffix sums, accumulated from the top so that small tails stay exact
    y = np.append(np.cumsum(x.x2[::-1])[::-1], 0.0) / y0
    y = np.clip(y, 0.0, 1.0)
    return y[:-1] ** d - y[1:] ** d


def jbt_probs(x: FluidState, d: int, eps: float = 0.0) -> np.ndarray:
    """Join a server with at most ``d`` jobs if any, else a uniformly random warm server."""
    y0 = x.y0
    if y0 <= 0.0:
        raise NoWarmServerError("no warm server: the job is lost")
    below = float(x.x2[: d + 1].sum())
    f = np.zeros_like(x.x2)
    if below > eps:
        f[: d + 1] = x.x2[: d + 1] / below
    else:
        f[:] = x.x2 / y0
    return f


@njit(cache=True)
def fluid_rates_kernel(v, lam, beta, d, jbt, eps, h):
    """Fill ``h[0..B]`` with the fluid assignment rates; return the dispatch regime."""
    n = v.shape[0] - 2
    y0 = 0.0
    for i in range(n - 1, -1, -1):
        y0 += v[2 + i]
    x01 = v[1]
    if y0 <= eps:
        m = min(beta * x01, lam)
        for i in range(n):
            h[i] = m
        return DISPATCH_NO_WARM
    if not jbt:
        upper = 0.0  # y_{i+1}
        for i in range(n - 1, -1, -1):
            lower = upper + v[2 + i]  # y_i
            a = min(lower / y0, 1.0)
            b = min(upper / y0, 1.0)
            h[i] = lam * (a ** d - b ** d)
            upper = lower
        return DISPATCH_NORMAL
    below = 0.0
    for k in range(d + 1):
        below += v[2 + k]
    if below > eps:
        for i in range(n):
            h[i] = lam * v[2 + i] / below if i <= d else 0.0
        return DISPATCH_NORMAL
    xd1 = v[3 + d]
    inflow = xd1 + (d + 1) * beta * x01
    fits = inflow <= lam
    surplus = max(lam - inflow, 0.0)
    for i in range(n):
        if i <= d:
            if fits:
                h[i] = beta * x01 + (xd1 if i == d else 0.0)
            else:
                h[i] = 0.0
        else:
            h[i] = v[2 + i] / y0 * surplus
    return DISPATCH_EXHAUSTED


def fluid_rates(x: FluidState, p: Params, eps: float = EPS_REGIME) -> np.ndarray:
    """Assignment rates ``h_0..h_B`` of the fluid model for the configured discipline."""
    v = x.as_vector()
    h = np.zeros(x.x2.size)
    fluid_rates_kernel(v, p.lam, p.beta, p.d, p.dispatch is Dispatch.JBT, eps, h)
    return h


def fluid_rates_pod(x: FluidState, p: Params, eps: float = EPS_REGIME) -> np.ndarray:
    return fluid_rates(x, p.replace(dispatch=Dispatch.POD, d=max(p.d, 1)), eps)


def fluid_rates_jbt(x: FluidState, p: Params, eps: float = EPS_REGIME) -> np.ndarray:
    return fluid_rates(x, p.replace(dispatch=Dispatch.JBT), eps)


# --- stochastic dispatch on counts ---------------------------------------------

@njit(cache=True)
def _class_of(n2, k):
    """Queue class of the k-th warm server when servers are listed class by class."""
    acc = 0
    for i in range(n2.shape[0]):
        acc += n2[i]
        if k < acc:
            return i
    return n2.shape[0] - 1


@njit(cache=True)
def dispatch_counts(n2, warm, d, jbt):
    """Draw the class joined by an arriving job (numba RNG); LOST / REJECTED otherwise."""
    if warm == 0:
        return LOST
    B = n2.shape[0] - 1
    if jbt:
        below = 0
        for k in range(d + 1):
            below += n2[k]
        if below > 0:
            c = _class_of(n2, np.random.randint(0, below))
        else:
            c = _class_of(n2, np.random.randint(0, warm))
    else:
        c = B
        for _ in range(d):
            s = _class_of(n2, np.random.randint(0, warm))
            if s < c:
                c = s
    if c >= B:
        return REJECTED
    return c


@njit(cache=True)
def _sample_many(n2, d, jbt, size, seed):
    np.random.seed(seed)
    warm = 0
    for i in range(n2.shape[0]):
        warm += n2[i]
    out = np.empty(size, dtype=np.int64)
    for k in range(size):
        out[k] = dispatch_counts(n2, warm, d, jbt)
    return out


def sample_dispatch(n: CountState, kernel: DispatchKernel, rng, size: int | None = None):
    """Sample the destination of arriving jobs on a count state.

    Returns a queue class ``i`` (the job joins a warm server with ``i`` jobs),
    ``LOST`` when no server is warm, or ``REJECTED`` when the chosen server is
    full.  ``rng`` is a :class:`numpy.random.Generator` or an integer seed.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    seed = int(rng.integers(0, 2**32 - 1))
    out = _sample_many(np.ascontiguousarray(n.n2), kernel.d, kernel.jbt, 1 if size is None else size, seed)
    return int(out[0]) if size is None else out
