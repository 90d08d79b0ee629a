"""
Reference allocations the proposed iteration is measured against.

- ``oracle_solve``: a centralized solver for the weighted-sum conservative-rate
  program, built on accelerated projected gradient and sharing no code with
  the dual iteration.
- ``equal_power_allocation``: every antenna splits its budget evenly.
- ``no_interference_bound``: the optimum with neither interference nor the
  conservative margin, an upper bound on achievable throughput.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple, Union

import numpy as np

from dascomp.api.evaluation import power_matrix, true_rates
from dascomp.api.scenario import ChannelScenario
from dascomp.core.engine import RunConfig, RunResult, run
from dascomp.core.model import (
    AccessMap,
    ProblemInstance,
    build_instance,
    compute_lin2006_step_sizes,
    weighted_sum_rate,
    weighted_sum_rate_gradient,
)
from dascomp.exceptions import NotConvergedError

logger = logging.getLogger(__name__)

DEFAULT_ORACLE_ITERATIONS = 100000
DEFAULT_ORACLE_TOL = 1e-7
KKT_CHECK_EVERY = 25


@dataclass(frozen=True)
class OracleConfig:
    """
    ``step`` seeds the backtracking search (1/L guess; ``None`` derives one
    from the gains). ``tol`` bounds the scaled KKT residual at exit.
    """

    step: Optional[float] = None
    max_iters: int = DEFAULT_ORACLE_ITERATIONS
    tol: float = DEFAULT_ORACLE_TOL

    def __post_init__(self):
        if self.step is not None and not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class OracleResult:
    p: np.ndarray
    value: float
    iterations: int
    kkt_residual: float
    converged: bool


# ─── Projection ───────────────────────────────────────────────────────────────

def capped_simplex_project(q: np.ndarray, cap: float) -> np.ndarray:
    """Euclidean projection onto {x ≥ 0, Σx ≤ cap}."""
    if not cap > 0:
        raise ValueError(f"cap must be positive, got {cap}")
    q = np.asarray(q, dtype=float)
    clipped = np.maximum(q, 0.0)
    if clipped.sum() <= cap:
        return clipped
    u = np.sort(q)[::-1]
    cs = np.cumsum(u)
    ranks = np.arange(1, len(u) + 1)
    rho = int(np.flatnonzero(u - (cs - cap) / ranks > 0)[-1]) + 1
    theta = (cs[rho - 1] - cap) / rho
    return np.maximum(q - theta, 0.0)


def project_budgets(inst: ProblemInstance, x: np.ndarray) -> np.ndarray:
    """Project every antenna's block of the flat vector onto its capped simplex."""
    access = inst.access
    clipped = np.maximum(x, 0.0)
    over = access.antenna_load(clipped) > inst.budgets
    if not over.any():
        return clipped

    ant = access.var_antenna
    order = np.lexsort((-x, ant))
    u, grp = x[order], ant[order]
    counts = np.bincount(grp, minlength=inst.num_antennas)
    first = np.concatenate([[0], np.cumsum(counts)[:-1]])
    cs = np.cumsum(u)
    before = np.where(first > 0, cs[np.maximum(first - 1, 0)], 0.0)
    rank = np.arange(len(u)) - first[grp] + 1
    within = cs - before[grp]
    ok = u - (within - inst.budgets[grp]) / rank > 0
    rho = np.bincount(grp, weights=ok, minlength=inst.num_antennas).astype(int)

    theta = np.zeros(inst.num_antennas)
    hit = over & (rho > 0)
    idx = first[hit] + rho[hit] - 1
    theta[hit] = (within[idx] - inst.budgets[hit]) / rho[hit]
    return np.maximum(x - theta[ant], 0.0)


# ─── Oracle ───────────────────────────────────────────────────────────────────

def oracle_kkt_residual(inst: ProblemInstance, p: np.ndarray) -> float:
    """
    Largest KKT violation of max f(p) s.t. p ≥ 0, E·p ≤ P, scaled by the
    largest gradient entry.

    Each antenna's multiplier is recovered from its block: zero when the
    budget is slack, else the mean gradient over its powered coordinates.
    """
    access = inst.access
    g = weighted_sum_rate_gradient(inst, p)
    scale = max(1.0, float(np.max(np.abs(g), initial=0.0)))
    load = access.antenna_load(p)
    worst = 0.0
    for k, served in enumerate(access.served_sets):
        if not served:
            continue
        idx = np.array([access.variable_index(k, n) for n in served])
        gk, pk = g[idx], p[idx]
        positive = pk > 1e-12 * inst.budgets[k]
        slack = inst.budgets[k] - load[k]
        if positive.any():
            nu_tight = max(0.0, float(gk[positive].mean()))
        else:
            nu_tight = max(0.0, float(gk.max()))

        best = math.inf
        for nu in (0.0, nu_tight):
            r = max(
                float(np.max(np.abs(gk[positive] - nu), initial=0.0)),
                float(np.max(np.maximum(gk[~positive] - nu, 0.0), initial=0.0)),
                nu * max(slack, 0.0),
                max(-slack, 0.0) * scale,
            )
            best = min(best, r)
        worst = max(worst, best)
    return worst / scale


def equal_power_allocation(inst: ProblemInstance) -> np.ndarray:
    """p_kn = P_k/|U(k)| for every n ∈ U(k)."""
    access = inst.access
    return inst.budgets[access.var_antenna] / access.served_counts[access.var_antenna]


def oracle_solve(
    inst: ProblemInstance,
    config: OracleConfig = OracleConfig(),
    start: Optional[np.ndarray] = None,
) -> OracleResult:
    """
    Maximize Σ w_n·log2(1 + Σ γp) over the per-antenna capped simplices.

    Accelerated projected gradient with backtracking on the step and an
    adaptive momentum restart; the best iterate seen is returned. Raises
    ``NotConvergedError`` (result attached) if the KKT residual is still
    above ``config.tol`` after ``config.max_iters`` steps.

    ``start`` (projected onto the budgets first) replaces the equal-power
    starting point, e.g. with another solver's answer for the same layout.
    """
    if config.step is not None:
        lip = 1.0 / config.step
    else:
        lip = float(np.max(inst.weights_per_variable * inst.gains ** 2, initial=1.0)) / math.log(2.0)

    if start is None:
        x = equal_power_allocation(inst)
    else:
        start = np.asarray(start, dtype=float)
        if start.shape != (inst.access.num_variables,):
            raise ValueError(f"start has shape {start.shape}, expected ({inst.access.num_variables},)")
        x = project_budgets(inst, start)
    fx = weighted_sum_rate(inst, x)
    z, momentum = x.copy(), 1.0
    best_x, best_f = x.copy(), fx
    residual = oracle_kkt_residual(inst, x)
    it = 0

    while residual > config.tol and it < config.max_iters:
        it += 1
        fz = weighted_sum_rate(inst, z)
        gz = weighted_sum_rate_gradient(inst, z)
        while True:
            x_new = project_budgets(inst, z + gz / lip)
            d = x_new - z
            f_new = weighted_sum_rate(inst, x_new)
            if f_new >= fz + float(np.dot(gz, d)) - 0.5 * lip * float(np.dot(d, d)) - 1e-15 * abs(fz):
                break
            lip *= 2.0

        if f_new < fx or float(np.dot(gz, x_new - x)) < 0:
            # momentum overshot; restart from the last accepted point
            momentum = 1.0
            z = x.copy()
            lip *= 0.9
        else:
            next_momentum = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum * momentum))
            z = x_new + ((momentum - 1.0) / next_momentum) * (x_new - x)
            x, fx, momentum = x_new, f_new, next_momentum
            lip *= 0.95
            if fx > best_f:
                best_x, best_f = x.copy(), fx
        if it % KKT_CHECK_EVERY == 0:
            residual = oracle_kkt_residual(inst, best_x)

    residual = oracle_kkt_residual(inst, best_x)
    result = OracleResult(
        p=best_x,
        value=best_f,
        iterations=it,
        kkt_residual=residual,
        converged=residual <= config.tol,
    )
    if not result.converged:
        logger.warning("oracle stopped after %d iterations with KKT residual %.3g", it, residual)
        raise NotConvergedError(f"oracle not converged after {it} iterations", result=result)
    logger.debug("oracle converged in %d iterations, value %.12g", it, best_f)
    return result


# ─── Baselines on scenarios ───────────────────────────────────────────────────

def run_lin2006(inst: ProblemInstance, config: RunConfig) -> RunResult:
    """The proposed iteration with the older, uniform step-size bound."""
    steps = compute_lin2006_step_sizes(inst, beta=config.step_sizes.beta)
    return run(inst, replace(config, step_sizes=steps))


def _positive_gain_access(scenario: ChannelScenario, access: AccessMap) -> Tuple[AccessMap, np.ndarray]:
    """Drop serving pairs with zero gain; returns the reduced map and the kept users."""
    kept, serving = [], []
    for n, antennas in enumerate(access.serving_sets):
        live = tuple(k for k in antennas if scenario.raw_gain[k, n] > 0)
        if live:
            kept.append(n)
            serving.append(live)
    return AccessMap.from_serving_sets(access.num_antennas, serving), np.array(kept, dtype=int)


def no_interference_bound(
    scenario: ChannelScenario,
    access: Optional[AccessMap] = None,
    weights: Union[float, np.ndarray] = 1.0,
    budgets: Union[float, np.ndarray] = 1.0,
    config: OracleConfig = OracleConfig(),
    start: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Per-user rate (bit/s/Hz) of the optimal allocation when nobody interferes
    and the margin is dropped: γ = |h|²/σ², evaluated with I(n) = ∅.

    Users with no positive gain get 0. ``start`` is a flat allocation over
    ``access`` used to warm-start the oracle.
    """
    access = access if access is not None else scenario.access
    reduced, kept = _positive_gain_access(scenario, access)
    rates = np.zeros(access.num_users)
    if len(kept) == 0:
        return rates

    w = np.broadcast_to(np.asarray(weights, dtype=float), (access.num_users,))[kept]
    gains = scenario.raw_gain[reduced.var_antenna, kept[reduced.var_user]] / scenario.noise_power
    inst = build_instance(reduced, gains, weights=w, budgets=budgets)
    warm = None
    if start is not None:
        warm = power_matrix(np.asarray(start, dtype=float), access)[reduced.var_antenna, kept[reduced.var_user]]
    solution = oracle_solve(inst, config, start=warm)

    powers = np.zeros((access.num_antennas, access.num_users))
    powers[reduced.var_antenna, kept[reduced.var_user]] = solution.p
    flat = powers[access.var_antenna, access.var_user]
    rates[:] = true_rates(flat, scenario, access=access, interference=False)
    return rates
