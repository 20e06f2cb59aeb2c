"""Fluid and stochastic models of asynchronous load balancing and auto-scaling."""

from .ctmc import SimConfig, replicate, run
from .dispatch import DispatchKernel, fluid_rates, sample_dispatch
from .experiments import (Scenario, cost_J, find_min_eta, max_queue, scenario_fig1,
                          scenario_fig2, scenario_prop4, scenario_th3, scenario_th3_convergence)
from .fixed_point import FixedPoint, find_fixed_points, jbt_family, solve_fixed_point
from .fluid import IntegratorConfig, drift, integrate
from .io import RunConfig, load_config, parse_config, serialize_config, write_trajectory_csv
from .rules import (ScalingRule, blind, eta_rule, lipschitz_estimate, prop4_rule, rate_idle,
                    satisfies_optimality_condition)
from .state import (CountState, Dispatch, FluidState, Params, PowerCoeffs, UndefinedMetricError,
                    all_cold, minimal_dimensioning, optimal_state, weighted_distance)
from .trajectory import Trajectory

__all__ = [
    "CountState", "Dispatch", "DispatchKernel", "FixedPoint", "FluidState", "IntegratorConfig",
    "Params", "PowerCoeffs", "RunConfig", "ScalingRule", "Scenario", "SimConfig", "Trajectory",
    "UndefinedMetricError", "all_cold", "blind", "cost_J", "drift", "eta_rule", "find_fixed_points",
    "find_min_eta", "fluid_rates", "integrate", "jbt_family", "lipschitz_estimate", "load_config",
    "max_queue", "minimal_dimensioning", "optimal_state", "parse_config", "prop4_rule",
    "rate_idle", "replicate", "run", "sample_dispatch", "satisfies_optimality_condition",
    "scenario_fig1", "scenario_fig2", "scenario_prop4", "scenario_th3",
    "scenario_th3_convergence", "serialize_config", "solve_fixed_point", "weighted_distance",
    "write_trajectory_csv",
]
