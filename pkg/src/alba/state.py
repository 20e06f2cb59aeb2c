"""Domain types shared by the simulator, the fluid model and the solvers.

A system state is stored as the vector of server proportions

    v = (x00, x01, x02, x12, ..., xB2)

where ``x00`` is the cold mass, ``x01`` the initializing mass and ``x{i}2``
the mass of warm servers holding ``i`` jobs.  ``FluidState`` wraps that
vector; the integrator and the simulator work on raw arrays in the same
layout.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

MASS_TOL = 1e-9

#: Default truncation used when the buffer is infinite.
DEFAULT_TRUNCATION = 64


class UndefinedMetricError(ValueError):
    """A queue-length metric was requested on a state where it has no meaning."""


class Dispatch(str, enum.Enum):
    POD = "pod"
    JBT = "jbt"


@dataclass(frozen=True)
class Params:
    """Model parameters.

    Parameters
    ----------
    lam : float
        Arrival rate per server, in (0, 1).
    alpha, beta, gamma : float
        Scaling-clock factor, initialization rate and expiration rate.
    d : int
        Number of sampled servers (Power-of-d) or the threshold (JBT-d).
    dispatch : Dispatch
        Dispatching discipline.
    buffer : int or None
        Buffer size ``B``; ``None`` means infinite.
    """

    lam: float
    alpha: float
    beta: float
    gamma: float
    d: int = 1
    dispatch: Dispatch = Dispatch.POD
    buffer: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "dispatch", Dispatch(self.dispatch))
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"lambda must lie in (0,1), got {self.lam}")
        for name in ("alpha", "beta", "gamma"):
            value = getattr(self, name)
            if not (value > 0.0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value}")
        if int(self.d) != self.d:
            raise ValueError(f"d must be an integer, got {self.d}")
        object.__setattr__(self, "d", int(self.d))
        if self.dispatch is Dispatch.POD and self.d < 1:
            raise ValueError("Power-of-d requires d >= 1")
        if self.dispatch is Dispatch.JBT and self.d < 0:
            raise ValueError("JBT-d requires d >= 0")
        if self.buffer is not None:
            if int(self.buffer) != self.buffer or self.buffer < 1:
                raise ValueError(f"buffer must be a positive integer or None, got {self.buffer}")
            object.__setattr__(self, "buffer", int(self.buffer))
            if self.buffer <= self.d:
                raise ValueError(f"buffer must exceed d (B={self.buffer}, d={self.d})")

    @property
    def is_jiq(self) -> bool:
        return self.dispatch is Dispatch.JBT and self.d == 0

    def truncation(self) -> int:
        """Buffer bound used for array storage."""
        if self.buffer is not None:
            return self.buffer
        return max(DEFAULT_TRUNCATION, self.d + 32)

    def replace(self, **changes) -> "Params":
        values = {
            "lam": self.lam, "alpha": self.alpha, "beta": self.beta, "gamma": self.gamma,
            "d": self.d, "dispatch": self.dispatch, "buffer": self.buffer,
        }
        values.update(changes)
        return Params(**values)


@dataclass(frozen=True)
class FluidState:
    """Occupancy fractions on the simplex.

    ``x2[i]`` is the fraction of warm servers with ``i`` jobs, ``i = 0..B``.
    """

    x00: float
    x01: float
    x2: np.ndarray
    tol: float = field(default=MASS_TOL, repr=False, compare=False)

    def __post_init__(self):
        x2 = np.array(self.x2, dtype=float)
        if x2.ndim != 1 or x2.size < 2:
            raise ValueError("x2 must be a vector with at least two entries (i = 0, 1)")
        x2.setflags(write=False)
        object.__setattr__(self, "x2", x2)
        object.__setattr__(self, "x00", float(self.x00))
        object.__setattr__(self, "x01", float(self.x01))
        if min(self.x00, self.x01, float(x2.min())) < 0.0:
            raise ValueError("state coordinates must be nonnegative")
        total = self.x00 + self.x01 + float(x2.sum())
        if abs(total - 1.0) > self.tol:
            raise ValueError(f"state mass must be 1, got {total!r}")

    @classmethod
    def from_vector(cls, v, tol: float = MASS_TOL) -> "FluidState":
        v = np.asarray(v, dtype=float)
        return cls(v[0], v[1], v[2:], tol=tol)

    @classmethod
    def from_coords(cls, buffer: int, x00=0.0, x01=0.0, **warm) -> "FluidState":
        """Build a state from keyword coordinates such as ``x02=0.1, x12=0.3``.

        Warm coordinates are named ``x{i}2``; anything not given is zero.
        """
        x2 = np.zeros(buffer + 1)
        for key, value in warm.items():
            if not (key.startswith("x") and key.endswith("2") and key[1:-1].isdigit()):
                raise ValueError(f"unknown coordinate {key!r}")
            x2[int(key[1:-1])] = value
        return cls(x00, x01, x2)

    @property
    def buffer(self) -> int:
        return self.x2.size - 1

    @property
    def x02(self) -> float:
        return float(self.x2[0])

    @property
    def x12(self) -> float:
        return float(self.x2[1])

    def y(self, i: int) -> float:
        """Mass of warm servers with at least ``i`` jobs."""
        return float(self.x2[i:].sum())

    @property
    def y0(self) -> float:
        return float(self.x2.sum())

    @property
    def y1(self) -> float:
        return float(self.x2[1:].sum())

    def as_vector(self) -> np.ndarray:
        return np.concatenate(([self.x00, self.x01], self.x2))

    def padded(self, buffer: int) -> "FluidState":
        """Same state over a larger buffer (zero tail)."""
        if buffer < self.buffer:
            raise ValueError("cannot pad to a smaller buffer")
        x2 = np.zeros(buffer + 1)
        x2[: self.x2.size] = self.x2
        return FluidState(self.x00, self.x01, x2, tol=self.tol)

    def __eq__(self, other):
        if not isinstance(other, FluidState):
            return NotImplemented
        return (self.x00 == other.x00 and self.x01 == other.x01
                and np.array_equal(self.x2, other.x2))

    def __hash__(self):
        return hash((self.x00, self.x01, self.x2.tobytes()))


@dataclass(frozen=True)
class CountState:
    """Integer server counts; ``n2[i]`` warm servers hold ``i`` jobs."""

    n00: int
    n01: int
    n2: np.ndarray

    def __post_init__(self):
        n2 = np.array(self.n2, dtype=np.int64)
        if n2.ndim != 1 or n2.size < 2:
            raise ValueError("n2 must be a vector with at least two entries")
        if self.n00 < 0 or self.n01 < 0 or n2.min() < 0:
            raise ValueError("counts must be nonnegative")
        n2.setflags(write=False)
        object.__setattr__(self, "n2", n2)
        object.__setattr__(self, "n00", int(self.n00))
        object.__setattr__(self, "n01", int(self.n01))
        if self.N < 1:
            raise ValueError("at least one server is required")

    @property
    def N(self) -> int:
        return self.n00 + self.n01 + int(self.n2.sum())

    @property
    def buffer(self) -> int:
        return self.n2.size - 1

    @classmethod
    def from_fluid(cls, x: FluidState, N: int) -> "CountState":
        """Round ``N * x`` to integers summing to ``N`` (largest remainders)."""
        v = x.as_vector() * N
        base = np.floor(v).astype(np.int64)
        short = N - int(base.sum())
        if short > 0:
            order = np.argsort(-(v - base), kind="stable")
            base[order[:short]] += 1
        return cls(base[0], base[1], base[2:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate(([self.n00, self.n01], self.n2)).astype(np.int64)

    def to_fluid(self) -> FluidState:
        return FluidState.from_vector(self.as_vector() / self.N)

    def __eq__(self, other):
        if not isinstance(other, CountState):
            return NotImplemented
        return (self.n00 == other.n00 and self.n01 == other.n01
                and np.array_equal(self.n2, other.n2))

    def __hash__(self):
        return hash((self.n00, self.n01, self.n2.tobytes()))


@dataclass(frozen=True)
class PowerCoeffs:
    c01: float = 1.0
    c02: float = 1.0
    c12: float = 1.0
    kappa1: float = 1.0
    kappa2: float = 1.0

    def __post_init__(self):
        for name in ("c01", "c02", "c12", "kappa1", "kappa2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


# --- named states ---------------------------------------------------------

def all_cold(buffer: int) -> FluidState:
    return FluidState.from_coords(buffer, x00=1.0)


def optimal_state(lam: float, buffer: int) -> FluidState:
    """The point with ``1 - lam`` cold servers and ``lam`` busy servers holding one job."""
    return FluidState.from_coords(buffer, x00=1.0 - lam, x12=lam)


def minimal_dimensioning(lam: float, buffer: int) -> FluidState:
    """``1 - lam`` cold servers, the remaining ones idle-on."""
    return FluidState.from_coords(buffer, x00=1.0 - lam, x02=lam)


# --- metrics ----------------------------------------------------------------

def _weights(n: int) -> np.ndarray:
    # vector layout (x00, x01, x02, x12, ...) has exponents 0, 1, 2, 3, ...
    return 0.5 ** np.arange(n)


def weighted_distance(x: FluidState, other: FluidState) -> float:
    """Distance induced by the norm ``sum |dx_ij|^2 / 2^(i+j)``."""
    a, b = x.as_vector(), other.as_vector()
    n = max(a.size, b.size)
    a = np.pad(a, (0, n - a.size))
    b = np.pad(b, (0, n - b.size))
    return float(np.sqrt(np.sum((a - b) ** 2 * _weights(n))))


def weighted_distance_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise weighted distance between state arrays of equal width."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    return np.sqrt(np.sum((a - b) ** 2 * _weights(a.shape[1]), axis=1))


def total_jobs(x: FluidState) -> float:
    return float(np.dot(np.arange(x.x2.size), x.x2))


def per_warm_queue(x: FluidState) -> float:
    """Mean number of jobs per warm server."""
    y0 = x.y0
    if y0 <= 0.0:
        raise UndefinedMetricError("no warm servers: jobs per warm server is undefined")
    return total_jobs(x) / y0


def per_busy_queue(x: FluidState) -> float:
    """Mean number of jobs per busy server."""
    y1 = x.y1
    if y1 <= 0.0:
        raise UndefinedMetricError("no busy servers: jobs per busy server is undefined")
    return total_jobs(x) / y1


def power(x: FluidState, c: PowerCoeffs) -> float:
    return c.c01 * x.x01 + c.c02 * x.x02 + c.c12 * x.y1
