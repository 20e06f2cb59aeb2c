"""Command line entry point: ``alba {fluid,simulate,fixpoint,scenario,optimize}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .ctmc import SimulationOverflowError, replicate
from .fixed_point import FixedPointError, find_fixed_points
from .fluid import IntegratorConfig, TruncationOverflowError, integrate
from .io import (ConfigError, RunConfig, fixed_point_json, load_config,
                 version_string, write_trajectory_csv)
from .state import CountState, PowerCoeffs

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_ACCEPTANCE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="alba", description="Load balancing and auto-scaling models.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fluid", help="integrate the fluid model and write a CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="run replicated stochastic simulations and write a CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fixpoint", help="solve for the equilibrium and print it as JSON")
    p.add_argument("--config", required=True)

    p = sub.add_parser("scenario", help="run a named scenario and check its expected values")
    p.add_argument("name", choices=["fig1", "fig2", "prop4", "th3"])
    p.add_argument("--eta", type=float, default=1.0, help="eta of the fig2 scaling rule")
    p.add_argument("--outdir", required=True)
    p.add_argument("--replications", type=int, default=None,
                   help="override the number of stochastic replications")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("optimize", help="smallest eta meeting a queue-length bound")
    p.add_argument("--config", required=True)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--eta-lo", type=float, default=1e-3)
    p.add_argument("--eta-hi", type=float, default=1e3)
    return parser


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, default=_jsonable)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.bool_):
        return bool(v)
    raise TypeError(f"cannot serialize {type(v).__name__}")


# --- config-driven commands ------------------------------------------------------

def _cmd_fluid(cfg: RunConfig, out: str) -> int:
    fcfg = cfg.fluid or IntegratorConfig(horizon=(cfg.sim.horizon if cfg.sim else 100.0))
    traj = integrate(cfg.x0(), cfg.params, cfg.rule(), fcfg)
    write_trajectory_csv(traj, out)
    final = traj.final()
    print(_dump({"out": out, "final": {"x00": final.x00, "x01": final.x01, "x02": final.x02,
                                       "y1": final.y1}, "buffer": traj.meta["buffer"]}))
    return EXIT_OK


def _cmd_simulate(cfg: RunConfig, out: str) -> int:
    if cfg.sim is None:
        raise ConfigError("sim: block required for simulate")
    rule = cfg.rule()
    traj = replicate(cfg.params, rule, cfg.sim, CountState.from_fluid(cfg.x0(), cfg.sim.N))
    write_trajectory_csv(traj, out, rule=rule)
    print(_dump({"out": out, "events": traj.meta["events"], "event_counts": traj.event_counts,
                 "conservation_violations": traj.meta.get("conservation_violations", 0)}))
    return EXIT_OK


def _cmd_fixpoint(cfg: RunConfig) -> int:
    found = find_fixed_points(cfg.rule(), cfg.params.replace(buffer=None))
    if not found:
        raise FixedPointError("no equilibrium found")
    out = fixed_point_json(found[0])
    out["count"] = len(found)
    print(_dump(out))
    return EXIT_OK


def _cmd_optimize(cfg: RunConfig, q: float, lo: float, hi: float) -> int:
    f = cfg.fluid or IntegratorConfig(horizon=500.0, step=0.01, record_dt=0.1)
    res = ex.find_min_eta(cfg.params, q, cfg.x0(), (lo, hi), horizon=f.horizon, step=f.step,
                          record_dt=f.record_dt)
    print(_dump(res.as_dict()))
    return EXIT_OK


# --- scenarios ---------------------------------------------------------------------

def _check(value, target, tol=None, passed=None, **extra):
    if passed is None:
        passed = abs(value - target) <= tol
    out = {"value": value, "target": target, "passed": bool(passed)}
    if tol is not None:
        out["tol"] = tol
    out.update(extra)
    return out


def _scenario_config(scn: ex.Scenario) -> dict:
    p = scn.params
    return {"name": scn.name, "description": scn.description,
            "params": {"lambda": p.lam, "alpha": p.alpha, "beta": p.beta, "gamma": p.gamma,
                       "d": p.d, "dispatch": p.dispatch.value, "buffer": p.buffer},
            "rule": {"name": scn.rule.name, **scn.rule.settings,
                     "expression": scn.rule.expression},
            "initial": {"vector": scn.x0.as_vector().tolist()},
            "horizon": scn.horizon, "N": scn.N, "replications": scn.replications,
            "seed": scn.seed, "step": scn.step, "record_dt": scn.record_dt,
            "sample_dt": scn.sample_dt}


def _mass_check(*trajs) -> dict:
    err = max(float(np.abs(t.mass - 1.0).max()) for t in trajs)
    neg = min(float(t.states.min()) for t in trajs)
    return _check(err, 0.0, 1e-6, passed=err <= 1e-6 and neg >= 0.0, min_coordinate=neg)


def _stochastic(scn: ex.Scenario, outdir: Path, fname="stochastic.csv"):
    st = ex.run_stochastic(scn, check_conservation=True)
    write_trajectory_csv(st, outdir / fname, rule=scn.rule)
    return st


def _run_fig1(scn, outdir):
    fl = ex.run_fluid(scn)
    st = _stochastic(scn, outdir)
    write_trajectory_csv(fl, outdir / "fluid.csv")
    e = scn.expected
    sup = ex.sup_distance(st, fl)
    checks = {
        "x02_final": _check(float(fl.x02[-1]), e["x02"], e["x02_tol"]),
        "sup_dw": _check(sup, e["sup_dw"], passed=sup <= e["sup_dw"]),
        "fluid_mass": _mass_check(fl),
        "ctmc_conservation": _check(st.meta["conservation_violations"], 0, passed=st.meta["conservation_violations"] == 0),
    }
    return checks, {"sup_dw": sup, "events": st.meta["events"]}


def _run_fig2(scn, outdir):
    fl = ex.run_fluid(scn)
    st = _stochastic(scn, outdir)
    write_trajectory_csv(fl, outdir / "fluid.csv")
    e = scn.expected
    mq = ex.max_queue(fl)
    qT = float(fl.q_busy()[-1])
    positive = np.nonzero(fl.g > 0)[0]
    off = float(fl.times[positive[-1] + 1]) if positive.size and positive[-1] + 1 < len(fl) else None
    checks = {
        "max_queue": _check(mq, e["q"], passed=mq <= e["q"]),
        "q_final": _check(qT, e["q_limit"], e["q_limit_tol"]),
        "fluid_mass": _mass_check(fl),
        "ctmc_conservation": _check(st.meta["conservation_violations"], 0, passed=st.meta["conservation_violations"] == 0),
    }
    return checks, {"max_queue": mq, "q_final": qT, "scaling_stops_at": off,
                    "events": st.meta["events"]}


def _run_prop4(scn, outdir):
    fl = ex.run_fluid(scn)
    st = _stochastic(scn, outdir)
    write_trajectory_csv(fl, outdir / "fluid.csv")
    e = scn.expected
    qbar = float(fl.total_jobs[-1])
    y0 = fl.y0
    lam = scn.params.lam
    checks = {
        "qbar_final": _check(qbar, e["qbar_limit"], e["qbar_tol"] * e["qbar_limit"]),
        "y0_increasing": _check(float(np.diff(y0).min()), 0.0,
                                passed=bool(np.all(np.diff(y0) >= -1e-12)
                                            and lam - e["y0_gap"] <= y0[-1] <= lam + 1e-12)),
        "g_positive": _check(float(fl.g.min()), 0.0, passed=bool(np.all(fl.g > 0))),
        "fluid_mass": _mass_check(fl),
    }
    return checks, {"qbar_final": qbar, "qbar_limit": e["qbar_limit"],
                    "qbar_limit_rule_rate": e["qbar_limit_rule_rate"], "events": st.meta["events"]}


def _run_th3(scn, outdir):
    runs = ex.scenario_th3_convergence(p=scn.params, horizon=scn.horizon, step=scn.step,
                                       record_dt=scn.record_dt)
    target = ex.optimal_cost(scn.params, PowerCoeffs())
    checks = {}
    for r in runs:
        write_trajectory_csv(r.trajectory, outdir / f"fluid_{r.rule}_{r.start}.csv")
        checks[f"{r.rule}/{r.start}/distance"] = _check(r.distance, 0.0, 1e-3)
        checks[f"{r.rule}/{r.start}/cost"] = _check(r.cost, target, 0.02 * target)
    st = _stochastic(scn, outdir)
    checks["fluid_mass"] = _mass_check(*[r.trajectory for r in runs])
    return checks, {"optimal_cost": target, "events": st.meta["events"]}


def _cmd_scenario(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.name == "fig1":
        scn, runner = ex.scenario_fig1(), _run_fig1
    elif args.name == "fig2":
        scn, runner = ex.scenario_fig2(args.eta), _run_fig2
    elif args.name == "prop4":
        scn, runner = ex.scenario_prop4(), _run_prop4
    else:
        scn, runner = ex.scenario_th3(), _run_th3
    if args.replications is not None:
        if args.replications < 1:
            raise ConfigError("--replications must be >= 1")
        scn.replications = args.replications
    scn.seed = args.seed
    checks, values = runner(scn, outdir)
    passed = all(c["passed"] for c in checks.values())
    summary = {"scenario": args.name, "version": version_string(), "config": _scenario_config(scn),
               "expected": scn.expected, **values, "checks": checks, "passed": passed}
    (outdir / "summary.json").write_text(_dump(summary) + "\n")
    print(_dump({"scenario": args.name, "passed": passed,
                 "failed": [k for k, c in checks.items() if not c["passed"]]}))
    return EXIT_OK if passed else EXIT_ACCEPTANCE


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        if args.command == "scenario":
            return _cmd_scenario(args)
        cfg = load_config(args.config)
        if args.command == "fluid":
            return _cmd_fluid(cfg, args.out)
        if args.command == "simulate":
            return _cmd_simulate(cfg, args.out)
        if args.command == "fixpoint":
            return _cmd_fixpoint(cfg)
        return _cmd_optimize(cfg, args.q, args.eta_lo, args.eta_hi)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"alba: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TruncationOverflowError, SimulationOverflowError, FixedPointError) as exc:
        print(f"alba: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
