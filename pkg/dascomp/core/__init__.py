from dascomp.core.model import AccessMap, ProblemInstance, StepSizes, AlgorithmState
from dascomp.core.local_solver import solve_subproblem, solve_subproblems
from dascomp.core.engine import RunConfig, RunResult, run
from dascomp.core.runtime import NodeTopology, assign_hosts, run_distributed

__all__ = [
    "AccessMap",
    "ProblemInstance",
    "StepSizes",
    "AlgorithmState",
    "solve_subproblem",
    "solve_subproblems",
    "RunConfig",
    "RunResult",
    "run",
    "NodeTopology",
    "assign_hosts",
    "run_distributed",
]
