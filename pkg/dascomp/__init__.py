"""
dascomp - Distributed CoMP power allocation for distributed antenna systems.

This library runs a single-layer proximal dual iteration that splits the
weighted-sum-rate power allocation problem into closed-form per-user
subproblems, either as one process or as base stations passing messages over
a simulated backhaul, and ships the scenario generator, baselines and
experiment harness needed to check it.
"""

__version__ = "0.1.0"
__author__ = "dascomp developers"

# Public API exports
from dascomp.core.model import (
    AccessMap,
    ProblemInstance,
    StepSizes,
    AlgorithmState,
    SubproblemSolution,
    build_instance,
    validate_instance,
    compute_theorem1_step_sizes,
    compute_lin2006_step_sizes,
    manual_step_sizes,
    load_instance,
    save_instance,
)
from dascomp.core.local_solver import solve_subproblem
from dascomp.core.engine import RunConfig, RunResult, run, check_stationary
from dascomp.core.runtime import NodeTopology, assign_hosts, run_distributed
from dascomp.api.scenario import generate_scenario, build_problem_instance
from dascomp.api.baselines import OracleConfig, oracle_solve, equal_power_allocation, no_interference_bound
from dascomp.api.evaluation import conservative_rate, true_rate, throughput_report
from dascomp.api.experiment import load_config, run_experiment, compare_step_sizes
from dascomp.exceptions import (
    DasCompError,
    InvalidInstanceError,
    DistanceTooSmallError,
    NotConvergedError,
    ProtocolError,
    ConfigError,
)

__all__ = [
    # Version
    "__version__",
    # Problem data
    "AccessMap",
    "ProblemInstance",
    "StepSizes",
    "AlgorithmState",
    "SubproblemSolution",
    "build_instance",
    "validate_instance",
    "compute_theorem1_step_sizes",
    "compute_lin2006_step_sizes",
    "manual_step_sizes",
    "load_instance",
    "save_instance",
    # Solvers
    "solve_subproblem",
    "RunConfig",
    "RunResult",
    "run",
    "check_stationary",
    "NodeTopology",
    "assign_hosts",
    "run_distributed",
    # Scenarios, baselines, evaluation
    "generate_scenario",
    "build_problem_instance",
    "OracleConfig",
    "oracle_solve",
    "equal_power_allocation",
    "no_interference_bound",
    "conservative_rate",
    "true_rate",
    "throughput_report",
    # Experiments
    "load_config",
    "run_experiment",
    "compare_step_sizes",
    # Exceptions
    "DasCompError",
    "InvalidInstanceError",
    "DistanceTooSmallError",
    "NotConvergedError",
    "ProtocolError",
    "ConfigError",
]
