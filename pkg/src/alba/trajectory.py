"""Time-stamped state sequences produced by the integrator and the simulator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .state import FluidState

EVENT_NAMES = ("arrival", "lost", "rejected", "departure", "scale_success",
               "scale_noop", "init_complete", "expiration")

COLD_LABELS = ("", "cold-boundary-recirculating", "cold-boundary-draining")
DISPATCH_LABELS = ("", "below-threshold-exhausted", "no-warm")


def regime_label(code: int) -> str:
    """Readable name of a combined regime code ``3 * cold + dispatch``."""
    parts = [COLD_LABELS[code // 3], DISPATCH_LABELS[code % 3]]
    parts = [s for s in parts if s]
    return "+".join(parts) if parts else "interior"


@dataclass
class Trajectory:
    """States on a time grid.

    ``states`` has one row per time in the ``(x00, x01, x02, x12, ...)``
    layout.  Fluid runs fill ``g``, ``regimes`` and ``busy_time`` (the running
    integral of ``y1``, i.e. cumulative service completions per server);
    stochastic runs fill ``event_counts``; replicated runs fill ``spread``.
    """

    times: np.ndarray
    states: np.ndarray
    event_counts: dict = field(default_factory=dict)
    g: np.ndarray | None = None
    regimes: np.ndarray | None = None
    busy_time: np.ndarray | None = None
    spread: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.times.ndim != 1 or self.times.size != self.states.shape[0]:
            raise ValueError("times and states must have matching lengths")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self):
        return self.times.size

    @property
    def buffer(self) -> int:
        return self.states.shape[1] - 3

    def state(self, k: int) -> FluidState:
        return FluidState.from_vector(self.states[k], tol=1e-6)

    def final(self) -> FluidState:
        return self.state(-1)

    def at(self, t: float) -> FluidState:
        """Recorded state at the last grid time not after ``t``."""
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.state(max(k, 0))

    # coordinate series
    @property
    def x00(self):
        return self.states[:, 0]

    @property
    def x01(self):
        return self.states[:, 1]

    @property
    def x02(self):
        return self.states[:, 2]

    @property
    def x12(self):
        return self.states[:, 3]

    @property
    def y0(self):
        return self.states[:, 2:].sum(axis=1)

    @property
    def y1(self):
        return self.states[:, 3:].sum(axis=1)

    @property
    def total_jobs(self):
        return self.states[:, 2:] @ np.arange(self.states.shape[1] - 2)

    @property
    def mass(self):
        return self.states.sum(axis=1)

    def q_warm(self) -> np.ndarray:
        """Jobs per warm server, NaN where no server is warm."""
        y0 = self.y0
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(y0 > 0, self.total_jobs / np.where(y0 > 0, y0, 1.0), np.nan)

    def q_busy(self) -> np.ndarray:
        """Jobs per busy server, NaN where no server is busy."""
        y1 = self.y1
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(y1 > 0, self.total_jobs / np.where(y1 > 0, y1, 1.0), np.nan)

    def regime_labels(self) -> list[str]:
        if self.regimes is None:
            return [""] * len(self)
        return [regime_label(int(c)) for c in self.regimes]

    def window(self, t0: float, t1: float) -> "Trajectory":
        mask = (self.times >= t0) & (self.times <= t1)
        pick = lambda a: None if a is None else a[mask]
        return Trajectory(self.times[mask], self.states[mask], dict(self.event_counts),
                          pick(self.g), pick(self.regimes), pick(self.busy_time),
                          pick(self.spread), dict(self.meta))
