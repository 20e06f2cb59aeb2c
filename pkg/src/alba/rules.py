"""Scaling rules: the probability of activating a cold server at a scaling tick.

Every rule built here is backed by a compiled stack program so that the
numba kernels (fluid integrator, CTMC simulator) can evaluate it without
calling back into Python.  Rules may also wrap an arbitrary Python callable;
those work everywhere a single state is evaluated, and in the pure-Python
integrator path, but not in the compiled simulator.

Expression grammar (parsed with :mod:`ast`)::

    state:     x00 x01 x02 x12 y0 y1
    params:    lam alpha beta gamma      (folded to constants at build time)
    operators: + - * / unary-
    functions: exp(a) expm1(a) pos(a) min(a, b) max(a, b)
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from .state import FluidState, Params, weighted_distance_arrays

# opcodes
OP_CONST, OP_VAR, OP_ADD, OP_SUB, OP_MUL, OP_DIV = 0, 1, 2, 3, 4, 5
OP_EXP, OP_POS, OP_MIN, OP_MAX, OP_NEG, OP_EXPM1 = 6, 7, 8, 9, 10, 11

STATE_VARS = ("x00", "x01", "x02", "x12", "y0", "y1")
PARAM_VARS = ("lam", "alpha", "beta", "gamma")
_UNARY = {"exp": OP_EXP, "expm1": OP_EXPM1, "pos": OP_POS}
_BINARY = {"min": OP_MIN, "max": OP_MAX}
_BINOPS = {ast.Add: OP_ADD, ast.Sub: OP_SUB, ast.Mult: OP_MUL, ast.Div: OP_DIV}


class RuleSyntaxError(ValueError):
    pass


@njit(cache=True)
def eval_program(ops, consts, x00, x01, x02, x12, y0, y1):
    """Run a rule program on the six state features; result clipped to [0, 1]."""
    stack = np.empty(ops.shape[0] + 1)
    sp = 0
    for k in range(ops.shape[0]):
        op = ops[k, 0]
        arg = ops[k, 1]
        if op == OP_CONST:
            stack[sp] = consts[arg]
            sp += 1
        elif op == OP_VAR:
            if arg == 0:
                v = x00
            elif arg == 1:
                v = x01
            elif arg == 2:
                v = x02
            elif arg == 3:
                v = x12
            elif arg == 4:
                v = y0
            else:
                v = y1
            stack[sp] = v
            sp += 1
        elif op == OP_EXP:
            stack[sp - 1] = math.exp(stack[sp - 1])
        elif op == OP_EXPM1:
            stack[sp - 1] = math.expm1(stack[sp - 1])
        elif op == OP_POS:
            if stack[sp - 1] < 0.0:
                stack[sp - 1] = 0.0
        elif op == OP_NEG:
            stack[sp - 1] = -stack[sp - 1]
        else:
            b = stack[sp - 1]
            a = stack[sp - 2]
            sp -= 1
            if op == OP_ADD:
                r = a + b
            elif op == OP_SUB:
                r = a - b
            elif op == OP_MUL:
                r = a * b
            elif op == OP_DIV:
                r = a / b
            elif op == OP_MIN:
                r = min(a, b)
            else:
                r = max(a, b)
            stack[sp - 1] = r
    g = stack[0]
    if g < 0.0 or g != g:
        return 0.0
    if g > 1.0:
        return 1.0
    return g


@njit(cache=True)
def eval_program_vector(ops, consts, v):
    """Evaluate a program on a state vector ``(x00, x01, x02, x12, ...)``."""
    y0 = 0.0
    for i in range(2, v.shape[0]):
        y0 += v[i]
    return eval_program(ops, consts, v[0], v[1], v[2], v[3], y0, y0 - v[2])


def compile_expression(text: str, params: Params | None = None):
    """Compile a rule expression to ``(ops, consts, inputs)``."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise RuleSyntaxError(f"cannot parse rule expression {text!r}: {exc.msg}") from None
    ops: list[tuple[int, int]] = []
    consts: list[float] = []
    inputs: set[str] = set()

    def const(value: float):
        consts.append(float(value))
        ops.append((OP_CONST, len(consts) - 1))

    def emit(node):
        if isinstance(node, ast.Expression):
            emit(node.body)
        elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            const(node.value)
        elif isinstance(node, ast.Name):
            if node.id in STATE_VARS:
                inputs.add(node.id)
                ops.append((OP_VAR, STATE_VARS.index(node.id)))
            elif node.id in PARAM_VARS:
                if params is None:
                    raise RuleSyntaxError(f"parameter {node.id!r} used but no parameters bound")
                const(getattr(params, node.id))
            else:
                raise RuleSyntaxError(f"unknown name {node.id!r} in rule expression")
        elif isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            emit(node.left)
            emit(node.right)
            ops.append((_BINOPS[type(node.op)], 0))
        elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            emit(node.operand)
            if isinstance(node.op, ast.USub):
                ops.append((OP_NEG, 0))
        elif isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
            name = node.func.id
            if name in _UNARY and len(node.args) == 1:
                emit(node.args[0])
                ops.append((_UNARY[name], 0))
            elif name in _BINARY and len(node.args) == 2:
                emit(node.args[0])
                emit(node.args[1])
                ops.append((_BINARY[name], 0))
            else:
                raise RuleSyntaxError(f"unsupported call {name!r} with {len(node.args)} argument(s)")
        else:
            raise RuleSyntaxError(f"unsupported syntax in rule expression: {ast.dump(node)[:60]}")

    emit(tree)
    return (np.array(ops, dtype=np.int64).reshape(-1, 2),
            np.array(consts if consts else [0.0], dtype=float),
            frozenset(inputs))


@dataclass(frozen=True, eq=False)
class ScalingRule:
    """A state-dependent scaling probability ``g``.

    Either ``program`` (compiled expression) or ``func`` must be given.
    ``declared_inputs`` lists the state features the rule reads, which is
    what a controller would have to collect from the servers.
    """

    name: str
    program: tuple[np.ndarray, np.ndarray] | None = None
    func: Callable[[FluidState], float] | None = None
    declared_inputs: frozenset = frozenset()
    expression: str | None = None
    settings: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.program is None and self.func is None:
            raise ValueError("a scaling rule needs a program or a callable")

    @classmethod
    def from_expression(cls, text: str, params: Params | None = None, name: str | None = None,
                        settings: dict | None = None) -> "ScalingRule":
        ops, consts, inputs = compile_expression(text, params)
        return cls(name=name or "expr", program=(ops, consts), declared_inputs=inputs,
                   expression=text, settings=dict(settings or {"expr": text}))

    @classmethod
    def from_callable(cls, func, name: str = "custom", inputs=()) -> "ScalingRule":
        return cls(name=name, func=func, declared_inputs=frozenset(inputs))

    @property
    def compiled(self) -> bool:
        return self.program is not None

    def evaluate(self, x: FluidState) -> float:
        if self.program is not None:
            ops, consts = self.program
            return float(eval_program(ops, consts, x.x00, x.x01, x.x02, x.x12, x.y0, x.y1))
        g = float(self.func(x))
        if not 0.0 <= g <= 1.0:
            raise ValueError(f"rule {self.name!r} returned {g}, outside [0, 1]")
        return g

    __call__ = evaluate

    def evaluate_vector(self, v: np.ndarray) -> float:
        if self.program is not None:
            return float(eval_program_vector(self.program[0], self.program[1], v))
        return self.evaluate(FluidState.from_vector(v, tol=1e-6))

    def evaluate_rows(self, states: np.ndarray) -> np.ndarray:
        return np.array([self.evaluate_vector(row) for row in np.atleast_2d(states)])

    def __repr__(self):
        extra = ", ".join(f"{k}={v}" for k, v in self.settings.items())
        return f"ScalingRule({self.name}{', ' + extra if extra else ''})"


# --- named rules ------------------------------------------------------------

def blind(theta: float) -> ScalingRule:
    """Constant scaling probability ``theta`` in (0, 1]."""
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must lie in (0,1], got {theta}")
    rule = ScalingRule.from_expression(repr(float(theta)), name="blind", settings={"theta": theta})
    return rule


def rate_idle(p: Params) -> ScalingRule:
    """Scale in proportion to the demand not yet covered by servers turning idle-on."""
    return ScalingRule.from_expression("pos(lam - beta * x01 - x12) / lam", p,
                                       name="rate_idle", settings={})


def eta_rule(eta: float, p: Params) -> ScalingRule:
    """The one-parameter family interpolating between Rate-Idle and an indicator."""
    if not eta > 0.0:
        raise ValueError(f"eta must be positive, got {eta}")
    denom = -math.expm1(-eta)
    text = f"-expm1(-({eta!r} / lam) * pos(lam - x12 - beta * x01)) / {denom!r}"
    return ScalingRule.from_expression(text, p, name="eta", settings={"eta": eta})


def prop4_rule(p: Params) -> ScalingRule:
    """``(x00 - 1 + lam)^+ / lam`` applied on the whole simplex."""
    return ScalingRule.from_expression("pos(x00 - 1 + lam) / lam", p, name="prop4", settings={})


def deficit(x: FluidState, p: Params) -> float:
    """Mean demand minus the rate at which servers become idle-on."""
    return p.lam - x.x12 - p.beta * x.x01


# --- property checks ----------------------------------------------------------

def random_states(n: int, rng: np.random.Generator, buffer: int = 8, p: Params | None = None
                  ) -> np.ndarray:
    """Random simplex points, stratified over interior and boundary pieces.

    Strata cycle through: interior, ``x02 = 0``, ``x00 = 0``, both zero, and
    (when ``p`` is given) states with ``x12 + beta*x01 >= lam``.
    """
    width = buffer + 3
    out = rng.dirichlet(np.ones(width), size=n)
    strata = np.arange(n) % (5 if p is not None else 4)
    for k in range(n):
        s = strata[k]
        if s in (1, 3):
            out[k, 2] = 0.0
        if s in (2, 3):
            out[k, 0] = 0.0
        if s == 4:
            x12 = rng.uniform(p.lam, 1.0)
            rest = rng.dirichlet(np.ones(width - 1)) * (1.0 - x12)
            out[k, :3] = rest[:3]
            out[k, 3] = x12
            out[k, 4:] = rest[3:]
        out[k] /= out[k].sum()
    return out


@dataclass
class OptimalityReport:
    passed: bool
    checked: int
    counterexample: FluidState | None = None
    g_value: float | None = None
    deficit_value: float | None = None


def satisfies_optimality_condition(rule: ScalingRule, p: Params, samples: int = 2000,
                                   seed: int = 0, g_tol: float = 1e-12,
                                   band: float = 1e-9) -> OptimalityReport:
    """Check ``g(x) = 0  <=>  x12 + beta*x01 >= lam`` on sampled states.

    States whose deficit lies in ``(0, band)`` are skipped: there a correct
    rule is legitimately smaller than ``g_tol``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    states = random_states(samples, rng, p=p)
    checked = 0
    for v in states:
        x = FluidState.from_vector(v, tol=1e-6)
        dfc = deficit(x, p)
        if 0.0 < dfc < band:
            continue
        g = rule.evaluate(x)
        checked += 1
        if (g <= g_tol) != (dfc <= 0.0):
            return OptimalityReport(False, checked, x, g, dfc)
    return OptimalityReport(True, checked)


def lipschitz_estimate(rule: ScalingRule, samples: int = 2000, seed: int = 0,
                       buffer: int = 8) -> float:
    """Largest observed ``|g(x) - g(x')| / d_w(x, x')`` over sampled pairs.

    Half of the pairs are independent draws, half are near neighbours at
    log-uniform distances down to 1e-9, which is where a discontinuity shows.
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    rng = np.random.default_rng(seed)
    a = random_states(samples, rng, buffer=buffer)
    b = random_states(samples, rng, buffer=buffer)
    near = np.arange(samples) % 2 == 1
    scale = 10.0 ** rng.uniform(-9, -1, size=samples)
    step = rng.normal(size=a.shape)
    step -= step.mean(axis=1, keepdims=True)
    cand = a + scale[:, None] * step
    ok = (cand >= 0).all(axis=1)
    b[near & ok] = cand[near & ok]
    b[near & ~ok] = a[near & ~ok]
    ga = rule.evaluate_rows(a)
    gb = rule.evaluate_rows(b)
    dist = weighted_distance_arrays(a, b)
    mask = dist > 0
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(ga - gb)[mask] / dist[mask]))


def lipschitz_stable(rule: ScalingRule, sizes=(500, 5000), growth: float = 2.0, seed: int = 0,
                     ) -> tuple[bool, list[float]]:
    """Whether the Lipschitz estimate stays put as the sample grows."""
    est = [lipschitz_estimate(rule, n, seed=seed + k) for k, n in enumerate(sizes)]
    stable = all(e <= growth * max(est[0], 1e-300) for e in est[1:]) or max(est) == 0.0
    return stable, est
