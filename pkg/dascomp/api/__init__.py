"""API module for dascomp."""

from dascomp.api.scenario import generate_scenario, generate_topology, build_problem_instance
from dascomp.api.baselines import oracle_solve, equal_power_allocation, no_interference_bound
from dascomp.api.evaluation import conservative_rates, true_rates, throughput_report
from dascomp.api.experiment import load_config, parse_config, run_experiment, compare_step_sizes

__all__ = [
    "generate_scenario",
    "generate_topology",
    "build_problem_instance",
    "oracle_solve",
    "equal_power_allocation",
    "no_interference_bound",
    "conservative_rates",
    "true_rates",
    "throughput_report",
    "load_config",
    "parse_config",
    "run_experiment",
    "compare_step_sizes",
]
