"""Exact simulation of the server-count Markov chain.

Servers are exchangeable, so the chain is simulated on counts
``(n00, n01, n02, n12, ..., nB2)`` with competing exponential clocks:

    arrival         lam * N          dispatched by the configured rule
    departure       n_i2, i >= 1     one job leaves a class-i server
    scaling tick    alpha * N        a cold server starts initializing w.p. g
    initialization  beta * n01       an initializing server turns idle-on
    expiration      gamma * n02      an idle-on server turns cold

Random numbers come from numba's per-thread Mersenne Twister, seeded at the
start of each run; replication ``r`` of a run with seed ``s`` uses the first
32-bit word of ``numpy.random.SeedSequence(s + r)``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .dispatch import LOST, REJECTED, dispatch_counts
from .rules import ScalingRule, eval_program
from .state import CountState, Dispatch, Params
from .trajectory import EVENT_NAMES, Trajectory

EV_ARRIVAL, EV_LOST, EV_REJECTED, EV_DEPARTURE = 0, 1, 2, 3
EV_SCALE_OK, EV_SCALE_NOOP, EV_INIT, EV_EXPIRE = 4, 5, 6, 7

STOP_HORIZON, STOP_EVENTS, STOP_OVERFLOW = 0, 1, 2
MAX_CAPACITY = 1 << 16


class SimulationOverflowError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    N: int
    horizon: float
    seed: int = 0
    sample_dt: float = 1.0
    replications: int = 1
    max_events: int | None = None
    check_conservation: bool = False

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not self.sample_dt > 0:
            raise ValueError("sample_dt must be positive")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.max_events is not None and self.max_events < 1:
            raise ValueError("max_events must be positive")


@njit(cache=True, nogil=True)
def _occupancy_index(c, base):
    idx = 0
    mult = 1
    for k in range(c.shape[0]):
        idx += c[k] * mult
        mult *= base
    return idx


@njit(cache=True, nogil=True)
def _simulate(c, lam, alpha, beta, gamma, d, jbt, finite, ops, consts, horizon, max_events,
              sample_dt, seed, samples, events, check, occ):
    """Run one path in place on counts ``c``.

    Returns (stop reason, samples written, events simulated, conservation
    violations, final time).
    """
    np.random.seed(seed)
    width = c.shape[0]
    B = width - 3
    N = 0
    for k in range(width):
        N += c[k]
    inv_n = 1.0 / N
    n2 = c[2:]
    warm = 0
    for i in range(B + 1):
        warm += n2[i]
    busy = warm - n2[0]
    n_samples = samples.shape[0]
    rec = 0
    t = 0.0
    n_events = 0
    violations = 0
    use_occ = occ.shape[0] > 0
    lam_n = lam * N
    alpha_n = alpha * N
    stop = STOP_HORIZON
    while True:
        rate = lam_n + busy + alpha_n + beta * c[1] + gamma * n2[0]
        t_next = t + np.random.exponential(1.0 / rate)
        while rec < n_samples and rec * sample_dt <= t_next:
            for k in range(width):
                samples[rec, k] = c[k] * inv_n
            rec += 1
        if use_occ:
            occ[_occupancy_index(c, N + 1)] += min(t_next, horizon) - t
        if t_next > horizon:
            t = horizon
            break
        if max_events > 0 and n_events >= max_events:
            stop = STOP_EVENTS
            break
        t = t_next
        u = np.random.random() * rate
        if u < lam_n:
            events[EV_ARRIVAL] += 1
            cls = dispatch_counts(n2, warm, d, jbt)
            if cls == LOST:
                events[EV_LOST] += 1
            elif cls == REJECTED:
                if not finite:
                    stop = STOP_OVERFLOW
                    break
                events[EV_REJECTED] += 1
            else:
                n2[cls] -= 1
                n2[cls + 1] += 1
                if cls == 0:
                    busy += 1
        else:
            u -= lam_n
            if u < busy:
                events[EV_DEPARTURE] += 1
                k = np.random.randint(0, busy)
                acc = 0
                for i in range(1, B + 1):
                    acc += n2[i]
                    if k < acc:
                        n2[i] -= 1
                        n2[i - 1] += 1
                        if i == 1:
                            busy -= 1
                        break
            else:
                u -= busy
                if u < alpha_n:
                    ok = False
                    if c[0] > 0:
                        g = eval_program(ops, consts, c[0] * inv_n, c[1] * inv_n, n2[0] * inv_n,
                                         n2[1] * inv_n, warm * inv_n, busy * inv_n)
                        ok = np.random.random() < g
                    if ok:
                        events[EV_SCALE_OK] += 1
                        c[0] -= 1
                        c[1] += 1
                    else:
                        events[EV_SCALE_NOOP] += 1
                else:
                    u -= alpha_n
                    if u < beta * c[1]:
                        events[EV_INIT] += 1
                        c[1] -= 1
                        n2[0] += 1
                        warm += 1
                    elif n2[0] > 0:
                        events[EV_EXPIRE] += 1
                        n2[0] -= 1
                        c[0] += 1
                        warm -= 1
        n_events += 1
        if check:
            total = 0
            bad = False
            for k in range(width):
                total += c[k]
                if c[k] < 0:
                    bad = True
            if total != N or bad:
                violations += 1
    return stop, rec, n_events, violations, t


def _run_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence(seed + rep).generate_state(1)[0])


def _simulate_once(p: Params, rule: ScalingRule, cfg: SimConfig, x0: CountState, seed32: int,
                   occupancy: np.ndarray | None = None):
    if not rule.compiled:
        raise TypeError("the simulator needs an expression-backed scaling rule")
    if x0.N != cfg.N:
        raise ValueError(f"initial counts sum to {x0.N}, expected N = {cfg.N}")
    ops, consts = rule.program
    jbt = p.dispatch is Dispatch.JBT
    finite = p.buffer is not None
    if finite:
        if x0.buffer > p.buffer:
            raise ValueError(f"initial counts have buffer {x0.buffer} > B = {p.buffer}")
        cap = p.buffer
    else:
        cap = max(p.truncation(), x0.buffer)
    n_samples = int(math.floor(cfg.horizon / cfg.sample_dt + 1e-9)) + 1
    while True:
        c = np.zeros(cap + 3, dtype=np.int64)
        v = x0.as_vector()
        c[: v.size] = v
        samples = np.zeros((n_samples, cap + 3))
        events = np.zeros(len(EVENT_NAMES), dtype=np.int64)
        occ = occupancy if occupancy is not None else np.zeros(0)
        if occupancy is not None:
            occ[:] = 0.0
        stop, rec, n_events, violations, t_end = _simulate(
            c, p.lam, p.alpha, p.beta, p.gamma, p.d, jbt, finite, ops, consts, cfg.horizon,
            cfg.max_events or 0, cfg.sample_dt, seed32, samples, events,
            cfg.check_conservation, occ)
        if stop != STOP_OVERFLOW:
            break
        if cap * 2 > MAX_CAPACITY:
            raise SimulationOverflowError(f"queue length exceeded {cap} servers' buffer limit")
        cap *= 2
    times = np.arange(rec) * cfg.sample_dt
    counts = dict(zip(EVENT_NAMES, events.tolist()))
    meta = {"kind": "ctmc", "N": cfg.N, "buffer": cap, "seed": seed32, "events": n_events,
            "stopped_by": "events" if stop == STOP_EVENTS else "horizon",
            "end_time": t_end, "conservation_violations": violations,
            "final_counts": c}
    return Trajectory(times, samples[:rec], event_counts=counts, meta=meta)


def run(p: Params, rule: ScalingRule, cfg: SimConfig, x0: CountState, replication: int = 0
        ) -> Trajectory:
    """Simulate one sample path; sampled every ``cfg.sample_dt`` by holding the last state."""
    return _simulate_once(p, rule, cfg, x0, _run_seed(cfg.seed, replication))


def stationary_occupancy(p: Params, rule: ScalingRule, x0: CountState, events: int,
                         seed: int = 0) -> tuple[dict, float]:
    """Time spent in each count state over a run of ``events`` transitions.

    Only meant for tiny systems: the table has ``(N+1)^(B+3)`` slots.
    Returns ``({count tuple: time fraction}, total time)``.
    """
    if p.buffer is None:
        raise ValueError("occupancy tables need a finite buffer")
    N = x0.N
    width = p.buffer + 3
    size = (N + 1) ** width
    if size > 10**7:
        raise ValueError("state space too large for an occupancy table")
    occ = np.zeros(size)
    cfg = SimConfig(N=N, horizon=1e300, seed=seed, sample_dt=1e299, max_events=events)
    _simulate_once(p, rule, cfg, x0.__class__(x0.n00, x0.n01, np.pad(x0.n2, (0, p.buffer + 1 - x0.n2.size))),
                   _run_seed(seed, 0), occupancy=occ)
    total = occ.sum()
    out = {}
    for idx in np.nonzero(occ)[0]:
        digits = []
        rest = int(idx)
        for _ in range(width):
            digits.append(rest % (N + 1))
            rest //= N + 1
        out[tuple(digits)] = occ[idx] / total
    return out, float(total)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("ALBA_THREADS", "")))
    except ValueError:
        return os.cpu_count() or 1


def replicate(p: Params, rule: ScalingRule, cfg: SimConfig, x0: CountState) -> Trajectory:
    """Pointwise mean over ``cfg.replications`` independent paths.

    ``spread`` holds the pointwise standard deviation (zero for a single
    replication); the individual paths are kept in ``meta['runs']``.
    """
    reps = range(cfg.replications)
    workers = min(_threads(), cfg.replications)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            runs = list(pool.map(lambda r: run(p, rule, cfg, x0, r), reps))
    else:
        runs = [run(p, rule, cfg, x0, r) for r in reps]
    if cfg.replications == 1:
        only = runs[0]
        only.spread = np.zeros_like(only.states)
        only.meta["runs"] = runs
        return only
    length = min(len(r) for r in runs)
    width = max(r.states.shape[1] for r in runs)
    stack = np.zeros((len(runs), length, width))
    for k, r in enumerate(runs):
        stack[k, :, : r.states.shape[1]] = r.states[:length]
    counts = {name: sum(r.event_counts[name] for r in runs) for name in EVENT_NAMES}
    meta = {"kind": "ctmc-mean", "N": cfg.N, "replications": cfg.replications,
            "runs": runs, "events": sum(r.meta["events"] for r in runs),
            "conservation_violations": sum(r.meta["conservation_violations"] for r in runs)}
    return Trajectory(runs[0].times[:length], stack.mean(axis=0), event_counts=counts,
                      spread=stack.std(axis=0, ddof=1), meta=meta)
