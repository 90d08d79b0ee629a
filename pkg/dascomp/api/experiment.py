"""
Config-driven experiments: parse a JSON config, run every strategy on every
seed, and write reports, traces, ledgers and a manifest.

Config layout (``schema_version`` 1)::

    {
      "schema_version": 1,
      "scenario": {"cells": 7, "spacing": 1000.0, "users_per_cell": 10,
                   "seeds": [1, 2], "P_dBm": 20.0, "margin_dB": 5.0,
                   "serving_count": 3, "bandwidth_hz": 1000000.0},
      "algorithm": {"c_n": 3.0, "beta": 1.0, "step_size_policy": "theorem1",
                    "manual_alpha": null, "stop_tol": 1e-08, "max_iters": 20000},
      "strategies": ["proposed", "epa", "oracle", "no_interference"],
      "runtime": "monolithic",
      "output": "results",
      "max_workers": 4
    }
"""

import asyncio
import dataclasses
import json
import logging
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from dascomp.api._utils import dbm_to_watt, sha256_file, sha256_text, write_csv, write_json
from dascomp.api.baselines import OracleConfig, equal_power_allocation, no_interference_bound, oracle_solve
from dascomp.api.evaluation import (
    ThroughputReport,
    aggregate_reports,
    dual_gap_trace,
    iterations_to_gap,
    throughput_report,
    write_aggregate_json,
    write_reports_csv,
    write_trace_csv,
)
from dascomp.api.scenario import DEFAULT_BANDWIDTH_HZ, ChannelScenario, build_problem_instance, generate_scenario
from dascomp.core.engine import RunConfig, RunResult, run, run_to_reference
from dascomp.core.model import (
    IterationRecord,
    ProblemInstance,
    StepSizes,
    compute_lin2006_step_sizes,
    compute_theorem1_step_sizes,
    manual_step_sizes,
)
from dascomp.core.runtime import LEDGER_COLUMNS, MessageLedger, assign_hosts, run_distributed
from dascomp.exceptions import ConfigError, NotConvergedError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
STRATEGIES = ("proposed", "epa", "oracle", "no_interference")
STEP_SIZE_POLICIES = ("theorem1", "lin2006", "manual")
RUNTIMES = ("monolithic", "distributed")
GAP_THRESHOLDS = (1e-2, 1e-3, 1e-4)
DEFAULT_MAX_WORKERS = 4


# ─── Config ───────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ScenarioBlock:
    seeds: Tuple[int, ...]
    cells: int = 7
    spacing: float = 1000.0
    users_per_cell: int = 10
    P_dBm: float = 20.0
    margin_dB: float = 5.0
    serving_count: int = 3
    bandwidth_hz: float = DEFAULT_BANDWIDTH_HZ


@dataclass(frozen=True)
class AlgorithmBlock:
    c_n: float = 3.0
    beta: float = 1.0
    step_size_policy: str = "theorem1"
    manual_alpha: Optional[Union[float, Tuple[float, ...]]] = None
    stop_tol: float = 1e-8
    max_iters: int = 20000


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioBlock
    algorithm: AlgorithmBlock = AlgorithmBlock()
    strategies: Tuple[str, ...] = STRATEGIES
    runtime: str = "monolithic"
    output: str = "results"
    max_workers: int = DEFAULT_MAX_WORKERS
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        algorithm = dataclasses.asdict(self.algorithm)
        if isinstance(self.algorithm.manual_alpha, tuple):
            algorithm["manual_alpha"] = list(self.algorithm.manual_alpha)
        scenario = dataclasses.asdict(self.scenario)
        scenario["seeds"] = list(self.scenario.seeds)
        return {
            "schema_version": self.schema_version,
            "scenario": scenario,
            "algorithm": algorithm,
            "strategies": list(self.strategies),
            "runtime": self.runtime,
            "output": self.output,
            "max_workers": self.max_workers,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def with_scenario(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, scenario=dataclasses.replace(self.scenario, **changes))


def _check_fields(data: Any, allowed: Sequence[str], path: str):
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", "expected an object")
    for key in data:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown field")


def _number(data: dict, key: str, path: str, default=None, integer: bool = False):
    name = f"{path}.{key}" if path else key
    if key not in data:
        if default is None:
            raise ConfigError(name, "missing required field")
        return default
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"expected a number, got {value!r}")
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(name, f"expected an integer, got {value!r}")
        return int(value)
    if not math.isfinite(value):
        raise ConfigError(name, "must be finite")
    return float(value)


def _require(cond: bool, name: str, message: str):
    if not cond:
        raise ConfigError(name, message)


def _parse_scenario(data: Any) -> ScenarioBlock:
    fields_ = [f.name for f in dataclasses.fields(ScenarioBlock)]
    _check_fields(data, fields_, "scenario")
    seeds = data.get("seeds")
    _require(isinstance(seeds, list) and len(seeds) > 0, "scenario.seeds", "must be a nonempty list")
    for i, s in enumerate(seeds):
        _require(isinstance(s, int) and not isinstance(s, bool) and s >= 0,
                 f"scenario.seeds[{i}]", f"expected a nonnegative integer, got {s!r}")
    _require(len(set(seeds)) == len(seeds), "scenario.seeds", "seeds must be distinct")

    block = ScenarioBlock(
        seeds=tuple(seeds),
        cells=_number(data, "cells", "scenario", 7, integer=True),
        spacing=_number(data, "spacing", "scenario", 1000.0),
        users_per_cell=_number(data, "users_per_cell", "scenario", 10, integer=True),
        P_dBm=_number(data, "P_dBm", "scenario", 20.0),
        margin_dB=_number(data, "margin_dB", "scenario", 5.0),
        serving_count=_number(data, "serving_count", "scenario", 3, integer=True),
        bandwidth_hz=_number(data, "bandwidth_hz", "scenario", DEFAULT_BANDWIDTH_HZ),
    )
    _require(block.cells >= 1, "scenario.cells", "must be at least 1")
    _require(block.spacing > 0, "scenario.spacing", "must be positive")
    _require(block.users_per_cell >= 0, "scenario.users_per_cell", "must be nonnegative")
    _require(block.margin_dB >= 0, "scenario.margin_dB", "must be nonnegative")
    _require(1 <= block.serving_count <= 7 * block.cells, "scenario.serving_count",
             f"must lie in [1, {7 * block.cells}]")
    _require(block.bandwidth_hz > 0, "scenario.bandwidth_hz", "must be positive")
    return block


def _parse_algorithm(data: Any) -> AlgorithmBlock:
    fields_ = [f.name for f in dataclasses.fields(AlgorithmBlock)]
    _check_fields(data, fields_, "algorithm")
    policy = data.get("step_size_policy", "theorem1")
    _require(policy in STEP_SIZE_POLICIES, "algorithm.step_size_policy",
             f"must be one of {', '.join(STEP_SIZE_POLICIES)}")

    manual = data.get("manual_alpha")
    if manual is not None:
        values = manual if isinstance(manual, list) else [manual]
        for v in values:
            _require(isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0 and math.isfinite(v),
                     "algorithm.manual_alpha", f"expected positive numbers, got {v!r}")
        manual = tuple(float(v) for v in manual) if isinstance(manual, list) else float(manual)
    _require(policy != "manual" or manual is not None, "algorithm.manual_alpha",
             "required when step_size_policy is manual")

    block = AlgorithmBlock(
        c_n=_number(data, "c_n", "algorithm", 3.0),
        beta=_number(data, "beta", "algorithm", 1.0),
        step_size_policy=policy,
        manual_alpha=manual,
        stop_tol=_number(data, "stop_tol", "algorithm", 1e-8),
        max_iters=_number(data, "max_iters", "algorithm", 20000, integer=True),
    )
    _require(block.c_n > 0, "algorithm.c_n", "must be positive")
    _require(0 < block.beta <= 1, "algorithm.beta", "must lie in (0, 1]")
    _require(block.stop_tol >= 0, "algorithm.stop_tol", "must be nonnegative")
    _require(block.max_iters >= 1, "algorithm.max_iters", "must be at least 1")
    return block


def parse_config(data: Any) -> ExperimentConfig:
    """Strict parse of a config object; every failure names its field."""
    allowed = ("schema_version", "scenario", "algorithm", "strategies", "runtime", "output", "max_workers")
    _check_fields(data, allowed, "")
    version = data.get("schema_version")
    _require(version == SCHEMA_VERSION, "schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")
    _require("scenario" in data, "scenario", "missing required field")

    strategies = data.get("strategies", list(STRATEGIES))
    _require(isinstance(strategies, list) and len(strategies) > 0, "strategies", "must be a nonempty list")
    for i, s in enumerate(strategies):
        _require(s in STRATEGIES, f"strategies[{i}]", f"unknown strategy {s!r}")
    _require(len(set(strategies)) == len(strategies), "strategies", "strategies must be distinct")

    runtime = data.get("runtime", "monolithic")
    _require(runtime in RUNTIMES, "runtime", f"must be one of {', '.join(RUNTIMES)}")
    output = data.get("output", "results")
    _require(isinstance(output, str) and output != "", "output", "must be a nonempty string")
    workers = _number(data, "max_workers", "", DEFAULT_MAX_WORKERS, integer=True)
    _require(workers >= 1, "max_workers", "must be at least 1")

    return ExperimentConfig(
        scenario=_parse_scenario(data["scenario"]),
        algorithm=_parse_algorithm(data.get("algorithm", {})),
        strategies=tuple(strategies),
        runtime=runtime,
        output=output,
        max_workers=workers,
    )


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(str(path), f"cannot read config: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(str(path), f"invalid JSON at line {e.lineno}: {e.msg}") from e
    return parse_config(data)


# ─── Per-seed pipeline ────────────────────────────────────────────────────────

def make_step_sizes(inst: ProblemInstance, algorithm: AlgorithmBlock, policy: Optional[str] = None) -> StepSizes:
    policy = policy or algorithm.step_size_policy
    if policy == "theorem1":
        return compute_theorem1_step_sizes(inst, beta=algorithm.beta)
    if policy == "lin2006":
        return compute_lin2006_step_sizes(inst, beta=algorithm.beta)
    alpha = algorithm.manual_alpha
    if isinstance(alpha, tuple) and len(alpha) != inst.num_antennas:
        raise ConfigError("algorithm.manual_alpha",
                          f"has {len(alpha)} entries, the scenario has {inst.num_antennas} antennas")
    return manual_step_sizes(inst, alpha, beta=algorithm.beta)


def build_seed_instance(config: ExperimentConfig, seed: int) -> Tuple[ChannelScenario, ProblemInstance]:
    sc = config.scenario
    scenario = generate_scenario(
        cells=sc.cells,
        spacing=sc.spacing,
        users_per_cell=sc.users_per_cell,
        per_user_count=sc.serving_count,
        seed=seed,
        margin_db=sc.margin_dB,
        bandwidth_hz=sc.bandwidth_hz,
    )
    inst = build_problem_instance(scenario, budgets=dbm_to_watt(sc.P_dBm), c=config.algorithm.c_n)
    return scenario, inst


@dataclass
class SeedOutcome:
    seed: int
    reports: Dict[str, ThroughputReport] = field(default_factory=dict)
    trace: Optional[List[IterationRecord]] = None
    ledger: Optional[MessageLedger] = None
    converged: Dict[str, bool] = field(default_factory=dict)


def _run_proposed(config: ExperimentConfig, scenario: ChannelScenario, inst: ProblemInstance,
                  allow_nonconverged: bool) -> Tuple[RunResult, Optional[MessageLedger]]:
    alg = config.algorithm
    run_config = RunConfig(step_sizes=make_step_sizes(inst, alg), max_iterations=alg.max_iters,
                           stop_tol=alg.stop_tol)
    try:
        if config.runtime == "distributed":
            topo = assign_hosts(inst, scenario.topology.bs_of_antenna)
            outcome = run_distributed(inst, topo, run_config)
            return outcome.result, outcome.ledger
        return run(inst, run_config), None
    except NotConvergedError as e:
        if not allow_nonconverged:
            raise
        logger.warning("seed %s: keeping the last iterate of a non-converged run", scenario.seed)
        held = e.result
        if config.runtime == "distributed":
            return held.result, held.ledger
        return held, None


def evaluate_seed(config: ExperimentConfig, seed: int, allow_nonconverged: bool = False) -> SeedOutcome:
    """Generate one realization and evaluate every configured strategy on it."""
    scenario, inst = build_seed_instance(config, seed)
    outcome = SeedOutcome(seed=seed)
    logger.info("seed %d: %d antennas, %d users", seed, inst.num_antennas, inst.num_users)

    # proposed first: its allocation warm-starts the oracle and the bound
    warm: Optional[np.ndarray] = None
    for strategy in sorted(config.strategies, key=lambda s: s != "proposed"):
        if strategy == "proposed":
            result, ledger = _run_proposed(config, scenario, inst, allow_nonconverged)
            outcome.trace, outcome.ledger = result.trace, ledger
            outcome.converged[strategy] = result.converged
            p = warm = result.power
        elif strategy == "epa":
            p = equal_power_allocation(inst)
        elif strategy == "oracle":
            try:
                p = oracle_solve(inst, start=warm).p
                outcome.converged[strategy] = True
            except NotConvergedError as e:
                if not allow_nonconverged:
                    raise
                p = e.result.p
                outcome.converged[strategy] = False
        else:
            rates = no_interference_bound(scenario, budgets=inst.budgets, weights=inst.weights,
                                          config=OracleConfig(), start=warm)
            outcome.reports[strategy] = ThroughputReport(
                seed=seed,
                strategy=strategy,
                per_user_true_se=rates,
                per_user_conservative_se=rates.copy(),
                weights=np.asarray(inst.weights, dtype=float),
                margin_ok=np.ones(inst.num_users, dtype=bool),
                bandwidth_hz=scenario.bandwidth_hz,
            )
            continue
        outcome.reports[strategy] = throughput_report(p, inst, scenario, strategy, seed)
    return outcome


def write_seed(outcome: SeedOutcome, out_dir: Union[str, Path]) -> List[Path]:
    seed_dir = Path(out_dir) / f"seed_{outcome.seed}"
    written = []
    for strategy, report in outcome.reports.items():
        written.append(write_reports_csv(seed_dir / f"{strategy}.csv", [report]))
    if outcome.trace is not None:
        written.append(write_trace_csv(seed_dir / "trace.csv", outcome.trace))
    if outcome.ledger is not None:
        written.append(write_csv(seed_dir / "messages.csv", LEDGER_COLUMNS, outcome.ledger.rows()))
        written.append(write_json(seed_dir / "messages_summary.json", outcome.ledger.summary()))
    return written


def _versions() -> dict:
    import scipy

    import dascomp

    return {
        "dascomp": dascomp.__version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def write_manifest(config: ExperimentConfig, out_dir: Path, files: Sequence[Path]) -> Path:
    entries = {
        str(path.relative_to(out_dir)): sha256_file(path)
        for path in sorted(files)
    }
    manifest = {
        "config": config.to_dict(),
        "config_sha256": sha256_text(config.canonical_json()),
        "seeds": list(config.scenario.seeds),
        "versions": _versions(),
        "files": entries,
    }
    return write_json(out_dir / "manifest.json", manifest)


@dataclass
class ExperimentResult:
    out_dir: Path
    outcomes: List[SeedOutcome]
    manifest: Path

    @property
    def reports(self) -> List[ThroughputReport]:
        return [r for o in self.outcomes for r in o.reports.values()]

    def summary(self) -> dict:
        return aggregate_reports(self.reports)


async def _gather_seeds(config: ExperimentConfig, allow_nonconverged: bool) -> List[SeedOutcome]:
    loop = asyncio.get_running_loop()
    sem = asyncio.Semaphore(config.max_workers)

    with ProcessPoolExecutor(max_workers=config.max_workers) as pool:
        async def one(seed: int) -> SeedOutcome:
            async with sem:
                return await loop.run_in_executor(pool, evaluate_seed, config, seed, allow_nonconverged)

        return list(await asyncio.gather(*(one(s) for s in config.scenario.seeds)))


async def arun_experiment(
    config: ExperimentConfig,
    out_dir: Optional[Union[str, Path]] = None,
    allow_nonconverged: bool = False,
) -> ExperimentResult:
    """
    Evaluate every seed concurrently and write the artifacts.

    Layout: ``<out>/seed_<s>/<strategy>.csv``, ``trace.csv``, ``messages.csv``
    (distributed runtime), then ``<out>/aggregate.json`` and
    ``<out>/manifest.json`` hashing every file above.
    """
    out = Path(out_dir if out_dir is not None else config.output)
    outcomes = await _gather_seeds(config, allow_nonconverged)

    files: List[Path] = []
    for outcome in sorted(outcomes, key=lambda o: o.seed):
        files.extend(write_seed(outcome, out))
    reports = [r for o in outcomes for r in o.reports.values()]
    files.append(write_aggregate_json(out / "aggregate.json", reports))
    manifest = write_manifest(config, out, files)
    logger.info("wrote %d files under %s", len(files) + 1, out)
    return ExperimentResult(out_dir=out, outcomes=outcomes, manifest=manifest)


def run_experiment(
    config: ExperimentConfig,
    out_dir: Optional[Union[str, Path]] = None,
    allow_nonconverged: bool = False,
) -> ExperimentResult:
    return asyncio.run(arun_experiment(config, out_dir, allow_nonconverged))


# ─── Step-size comparison ─────────────────────────────────────────────────────

COMPARISON_COLUMNS = ("seed", "threshold", "theorem1", "lin2006")


def _gap_iterations(inst: ProblemInstance, steps: StepSizes, config: ExperimentConfig, reference) -> List[float]:
    run_config = RunConfig(step_sizes=steps, max_iterations=config.algorithm.max_iters,
                           stop_tol=config.algorithm.stop_tol, reference=reference)
    try:
        trace = run(inst, run_config).trace
    except NotConvergedError as e:
        trace = e.result.trace
    return dual_gap_trace(trace, reference.value).tolist()


def _require_proposed(config: ExperimentConfig):
    if "proposed" not in config.strategies:
        raise ConfigError("strategies", "step-size comparison needs \"proposed\"")


def compare_seed(config: ExperimentConfig, seed: int) -> List[dict]:
    _require_proposed(config)
    _, inst = build_seed_instance(config, seed)
    reference = run_to_reference(inst, compute_theorem1_step_sizes(inst, beta=config.algorithm.beta))
    gaps = {
        policy: _gap_iterations(inst, make_step_sizes(inst, config.algorithm, policy), config, reference)
        for policy in ("theorem1", "lin2006")
    }
    return [
        {
            "seed": seed,
            "threshold": threshold,
            "theorem1": iterations_to_gap(gaps["theorem1"], threshold),
            "lin2006": iterations_to_gap(gaps["lin2006"], threshold),
        }
        for threshold in GAP_THRESHOLDS
    ]


async def acompare_step_sizes(config: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None) -> List[dict]:
    """Iterations until the dual gap settles below each threshold, for both step-size rules."""
    _require_proposed(config)
    loop = asyncio.get_running_loop()
    sem = asyncio.Semaphore(config.max_workers)

    with ProcessPoolExecutor(max_workers=config.max_workers) as pool:
        async def one(seed: int) -> List[dict]:
            async with sem:
                return await loop.run_in_executor(pool, compare_seed, config, seed)

        per_seed = await asyncio.gather(*(one(s) for s in config.scenario.seeds))
    rows = [row for group in per_seed for row in group]
    out = Path(out_dir if out_dir is not None else config.output)
    write_csv(out / "compare_steps.csv", COMPARISON_COLUMNS, rows)
    return rows


def compare_step_sizes(config: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None) -> List[dict]:
    return asyncio.run(acompare_step_sizes(config, out_dir))


# ─── Sweeps ───────────────────────────────────────────────────────────────────

SWEEP_COLUMNS = ("parameter", "value", "strategy", "realizations", "mean_user_throughput_bps", "half_width_bps")


async def _asweep(config: ExperimentConfig, parameter: str, values: Sequence, allow_nonconverged: bool) -> List[dict]:
    rows = []
    for value in values:
        point = config.with_scenario(**{parameter: value})
        outcomes = await _gather_seeds(point, allow_nonconverged)
        summary = aggregate_reports([r for o in outcomes for r in o.reports.values()])
        for strategy in point.strategies:
            stats_ = summary[strategy]
            rows.append({
                "parameter": parameter,
                "value": value,
                "strategy": strategy,
                "realizations": stats_["realizations"],
                "mean_user_throughput_bps": stats_["mean_user_throughput_bps"],
                "half_width_bps": stats_["half_width_bps"],
            })
    return rows


def sweep_power(config: ExperimentConfig, p_dbm_values: Sequence[float], out_dir: Optional[Union[str, Path]] = None,
                allow_nonconverged: bool = False) -> List[dict]:
    """Per-user throughput against the per-antenna power budget."""
    rows = asyncio.run(_asweep(config, "P_dBm", [float(v) for v in p_dbm_values], allow_nonconverged))
    write_csv(Path(out_dir if out_dir is not None else config.output) / "sweep_power.csv", SWEEP_COLUMNS, rows)
    return rows


def sweep_users(config: ExperimentConfig, users_per_cell_values: Sequence[int],
                out_dir: Optional[Union[str, Path]] = None, allow_nonconverged: bool = False) -> List[dict]:
    """Per-user throughput against the number of users per cell."""
    rows = asyncio.run(_asweep(config, "users_per_cell", [int(v) for v in users_per_cell_values], allow_nonconverged))
    write_csv(Path(out_dir if out_dir is not None else config.output) / "sweep_users.csv", SWEEP_COLUMNS, rows)
    return rows
