"""Run configuration files and trajectory CSV output."""

from __future__ import annotations

import copy
import csv
import json
import math
import subprocess
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .ctmc import SimConfig
from .fluid import IntegratorConfig
from .rules import RuleSyntaxError, ScalingRule, blind, eta_rule, prop4_rule, rate_idle
from .state import (Dispatch, FluidState, Params, UndefinedMetricError, all_cold,
                    minimal_dimensioning, optimal_state, per_warm_queue)
from .trajectory import Trajectory

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_COORD = {"type": "number", "minimum": 0}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["params", "rule", "initial"],
    "properties": {
        "name": {"type": "string"},
        "params": {
            "type": "object",
            "additionalProperties": False,
            "required": ["lambda", "alpha", "beta", "gamma"],
            "properties": {
                "lambda": _NUM, "alpha": _NUM, "beta": _NUM, "gamma": _NUM,
                "d": {"type": "integer", "minimum": 0},
                "dispatch": {"enum": ["pod", "jbt"]},
                "buffer": {"anyOf": [{"type": "integer", "minimum": 1}, {"type": "null"}]},
            },
        },
        "rule": {
            "type": "object",
            "required": ["type"],
            "properties": {"type": {"enum": ["blind", "rate_idle", "eta", "prop4", "expr"]}},
            "oneOf": [
                {"additionalProperties": False, "required": ["theta"],
                 "properties": {"type": {"const": "blind"}, "theta": _NUM}},
                {"additionalProperties": False,
                 "properties": {"type": {"const": "rate_idle"}}},
                {"additionalProperties": False, "required": ["eta"],
                 "properties": {"type": {"const": "eta"}, "eta": _NUM}},
                {"additionalProperties": False,
                 "properties": {"type": {"const": "prop4"}}},
                {"additionalProperties": False, "required": ["expr"],
                 "properties": {"type": {"const": "expr"}, "expr": {"type": "string"}}},
            ],
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "required": ["N", "horizon"],
            "properties": {
                "N": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "horizon": _POS,
                "sample_dt": _POS,
                "replications": {"type": "integer", "minimum": 1},
            },
        },
        "fluid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["horizon"],
            "properties": {
                "step": _POS,
                "method": {"enum": ["euler", "rk4"]},
                "horizon": _POS,
                "record_dt": _POS,
            },
        },
        "initial": {
            "type": "object",
            "oneOf": [
                {"additionalProperties": False, "required": ["preset"],
                 "properties": {"preset": {"enum": ["minimal_dimensioning", "all_cold", "optimal"]}}},
                {"additionalProperties": False, "required": ["coords"],
                 "properties": {"coords": {
                     "type": "object", "minProperties": 1,
                     "propertyNames": {"pattern": "^x(0[01]|[0-9]+2)$"},
                     "additionalProperties": _COORD}}},
                {"additionalProperties": False, "required": ["vector"],
                 "properties": {"vector": {"type": "array", "minItems": 4, "items": _COORD}}},
            ],
        },
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)

PRESETS = ("fig1", "fig2", "prop4", "th3")


class ConfigError(ValueError):
    """Configuration text that fails the schema or a model constraint."""


@dataclass(frozen=True)
class RunConfig:
    params: Params
    rule_spec: dict
    initial: dict
    sim: SimConfig | None = None
    fluid: IntegratorConfig | None = None
    name: str | None = None

    def rule(self) -> ScalingRule:
        return build_rule(self.rule_spec, self.params)

    def x0(self) -> FluidState:
        return build_initial(self.initial, self.params)


def _path(err) -> str:
    parts = [str(p) for p in err.absolute_path]
    return ".".join(parts) if parts else "<root>"


def _branch_errors(err) -> list:
    """Errors of the ``oneOf`` branch selected by its discriminating key, if any."""
    branches = {}
    for sub in err.context:
        branches.setdefault(sub.relative_schema_path[0], []).append(sub)
    chosen = list(branches.values())
    for bad in ("const", "required"):
        if len(chosen) > 1:
            chosen = [errs for errs in chosen if not any(e.validator == bad for e in errs)]
    return chosen[0] if len(chosen) == 1 else []


def _schema_errors(data) -> list[str]:
    out = []
    for err in sorted(_VALIDATOR.iter_errors(data), key=lambda e: list(map(str, e.absolute_path))):
        for e in (_branch_errors(err) if err.validator == "oneOf" else []) or [err]:
            out.append(f"{_path(e)}: {e.message} (constraint: {e.validator})")
    return out


def build_rule(spec: dict, p: Params) -> ScalingRule:
    kind = spec["type"]
    if kind == "blind":
        return blind(spec["theta"])
    if kind == "rate_idle":
        return rate_idle(p)
    if kind == "eta":
        return eta_rule(spec["eta"], p)
    if kind == "prop4":
        return prop4_rule(p)
    return ScalingRule.from_expression(spec["expr"], p)


def build_initial(spec: dict, p: Params) -> FluidState:
    B = p.buffer if p.buffer is not None else p.truncation()
    if "preset" in spec:
        return {"minimal_dimensioning": lambda: minimal_dimensioning(p.lam, B),
                "all_cold": lambda: all_cold(B),
                "optimal": lambda: optimal_state(p.lam, B)}[spec["preset"]]()
    if "coords" in spec:
        coords = dict(spec["coords"])
        top = max([int(k[1:-1]) for k in coords if k.endswith("2")] + [0])
        if p.buffer is not None and top > p.buffer:
            raise ValueError(f"coordinate x{top}2 exceeds the buffer B = {p.buffer}")
        x00, x01 = coords.pop("x00", 0.0), coords.pop("x01", 0.0)
        return FluidState.from_coords(max(B, top, 1), x00=x00, x01=x01, **coords)
    x = FluidState.from_vector(spec["vector"])
    return x.padded(max(B, x.buffer)) if p.buffer is None else x.padded(B)


def _params(block: dict) -> Params:
    return Params(lam=block["lambda"], alpha=block["alpha"], beta=block["beta"],
                  gamma=block["gamma"], d=block.get("d", 1),
                  dispatch=Dispatch(block.get("dispatch", "pod")), buffer=block.get("buffer"))


def config_from_dict(data: dict) -> RunConfig:
    errors = _schema_errors(data)
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    data = copy.deepcopy(data)
    section = "params"
    try:
        p = _params(data["params"])
        section = "rule"
        build_rule(data["rule"], p)
        section = "initial"
        build_initial(data["initial"], p)
        sim = fluid = None
        if "sim" in data:
            section = "sim"
            sim = SimConfig(**data["sim"])
        if "fluid" in data:
            section = "fluid"
            fluid = IntegratorConfig(**data["fluid"])
    except (ValueError, RuleSyntaxError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc
    return RunConfig(p, data["rule"], data["initial"], sim, fluid, data.get("name"))


def parse_config(text: str) -> RunConfig:
    """Validate a JSON run configuration; unknown keys are rejected."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<root>: not valid JSON ({exc})") from exc
    return config_from_dict(data)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def config_to_dict(cfg: RunConfig) -> dict:
    p = cfg.params
    out = {}
    if cfg.name is not None:
        out["name"] = cfg.name
    out["params"] = {"lambda": p.lam, "alpha": p.alpha, "beta": p.beta, "gamma": p.gamma,
                     "d": p.d, "dispatch": p.dispatch.value, "buffer": p.buffer}
    out["rule"] = dict(cfg.rule_spec)
    if cfg.sim is not None:
        s = cfg.sim
        out["sim"] = {"N": s.N, "seed": s.seed, "horizon": s.horizon, "sample_dt": s.sample_dt,
                      "replications": s.replications}
    if cfg.fluid is not None:
        f = cfg.fluid
        out["fluid"] = {"step": f.step, "method": f.method, "horizon": f.horizon,
                        "record_dt": f.record_dt}
    out["initial"] = copy.deepcopy(cfg.initial)
    return out


def serialize_config(cfg: RunConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2) + "\n"


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("alba").joinpath("presets", f"{name}.json").read_text()


def load_preset(name: str) -> RunConfig:
    return parse_config(preset_text(name))


# --- provenance -------------------------------------------------------------------

def version_string() -> str:
    """``git describe`` of the source tree, or the installed package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5, check=True)
        return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        from importlib.metadata import PackageNotFoundError, version
        try:
            return version("alba")
        except PackageNotFoundError:
            return "unknown"


# --- CSV ----------------------------------------------------------------------------

CSV_COLUMNS = ("t", "x00", "x01", "x02", "y1", "q_warm", "q_busy", "g", "regime")
SD_COLUMNS = ("sd_x00", "sd_x01", "sd_x02", "sd_y1")


def _fmt(value: float) -> str:
    if value is None or not math.isfinite(value):
        return ""
    return "%.9g" % value


def write_trajectory_csv(traj: Trajectory, path, rule: ScalingRule | None = None) -> None:
    """Write one row per sample time.

    ``g`` comes from the trajectory when recorded, otherwise from ``rule`` if
    given; undefined entries are left empty.  Trajectories carrying a spread
    (replicated runs) get extra ``sd_*`` columns.
    """
    if traj.g is not None:
        g = traj.g
    elif rule is not None:
        g = rule.evaluate_rows(traj.states)
    else:
        g = np.full(len(traj), np.nan)
    labels = traj.regime_labels()
    qw, qb = traj.q_warm(), traj.q_busy()
    spread = traj.spread if traj.spread is not None and traj.meta.get("kind") == "ctmc-mean" else None
    header = list(CSV_COLUMNS) + (list(SD_COLUMNS) if spread is not None else [])
    x00, x01, x02, y1 = traj.x00, traj.x01, traj.x02, traj.y1
    if spread is not None:
        n = len(traj)
        y1_runs = np.array([r.y1[:n] for r in traj.meta["runs"]])
        sd = np.column_stack([spread[:, 0], spread[:, 1], spread[:, 2], y1_runs.std(axis=0, ddof=1)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(len(traj)):
            row = [_fmt(traj.times[k]), _fmt(x00[k]), _fmt(x01[k]), _fmt(x02[k]), _fmt(y1[k]),
                   _fmt(qw[k]), _fmt(qb[k]), _fmt(g[k]), labels[k]]
            if spread is not None:
                row += [_fmt(v) for v in sd[k]]
            w.writerow(row)


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    """Columns of a trajectory CSV; empty numeric cells become NaN."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    out = {}
    for key in rows[0]:
        if key == "regime":
            out[key] = np.array([r[key] for r in rows], dtype=object)
        else:
            out[key] = np.array([float(r[key]) if r[key] != "" else np.nan for r in rows])
    return out


def fixed_point_json(fp) -> dict:
    x = fp.state
    v = x.as_vector()
    last = int(np.nonzero(v > 0)[0].max()) if np.any(v > 0) else 0
    names = ["x00", "x01"] + [f"x{i}2" for i in range(x.buffer + 1)]
    try:
        q = per_warm_queue(x)
    except UndefinedMetricError:
        q = None
    return {"state": {names[k]: float(v[k]) for k in range(last + 1)},
            "saturated": bool(fp.saturated), "residual": float(fp.residual),
            "unique": bool(fp.unique), "family_parameter": fp.family_parameter,
            "q_warm": q}
