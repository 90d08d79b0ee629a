"""
Single-layer proximal dual iteration (monolithic engine).

One iteration from (λ(t), y(t)):

    p(t)   = argmax_p L(p, λ(t), y(t))
    λ(t+1) = [λ(t) + α ⊙ (E·p(t) − P)]⁺
    z(t)   = argmax_p L(p, λ(t+1), y(t))
    y(t+1) = y(t) + β·(z(t) − y(t))

The primal answer is the final y. Both maximizations decompose per user and
are solved in closed form by :mod:`dascomp.core.local_solver`.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from dascomp.core.local_solver import solve_subproblems
from dascomp.core.model import (
    AlgorithmState,
    IterationRecord,
    ProblemInstance,
    StepSizes,
    weighted_sum_rate,
)
from dascomp.exceptions import NotConvergedError

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITERATIONS = 20000
DEFAULT_STOP_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class StationaryPoint:
    """A converged (y*, λ*) and the objective value f(y*) used as reference."""

    y: np.ndarray
    lam: np.ndarray
    value: float


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Step sizes, stopping rule and which diagnostics to keep for one run."""

    step_sizes: StepSizes
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    stop_tol: float = DEFAULT_STOP_TOL
    record_lyapunov: bool = False
    initial_state: Optional[AlgorithmState] = None
    reference: Optional[StationaryPoint] = None
    record_iterates: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.stop_tol >= 0:
            raise ValueError("stop_tol must be nonnegative")
        if self.record_lyapunov and self.reference is None:
            raise ValueError("record_lyapunov needs a reference stationary point")


@dataclass
class RunResult:
    """Final state, whether the stopping rule fired, and the per-iteration trace."""

    state: AlgorithmState
    converged: bool
    trace: List[IterationRecord] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return self.state.t

    @property
    def power(self) -> np.ndarray:
        """The primal answer p* = y(final)."""
        return self.state.y

    def stationary_point(self, inst: ProblemInstance) -> StationaryPoint:
        return StationaryPoint(
            y=self.state.y.copy(),
            lam=self.state.lam.copy(),
            value=weighted_sum_rate(inst, self.state.y),
        )


# ─── Building blocks ──────────────────────────────────────────────────────────

def lagrangian_maximize(inst: ProblemInstance, lam: np.ndarray, y: np.ndarray) -> np.ndarray:
    """argmax_{p ≥ 0} L(p, λ, y), assembled from the per-user closed forms."""
    return solve_subproblems(inst, lam, y)


def lagrangian_value(inst: ProblemInstance, p: np.ndarray, lam: np.ndarray, y: np.ndarray) -> float:
    """f(p) − λᵀ(E·p − P) − Σ (c_n/2)·(p − y)²."""
    excess = inst.access.antenna_load(p) - inst.budgets
    prox = 0.5 * float(np.dot(inst.proximal_per_variable, (p - y) ** 2))
    return weighted_sum_rate(inst, p) - float(np.dot(lam, excess)) - prox


def dual_update(lam: np.ndarray, p: np.ndarray, inst: ProblemInstance, alpha: np.ndarray) -> np.ndarray:
    """Projected dual ascent λ' = [λ + α(E·p − P)]⁺."""
    load = inst.access.antenna_load(p)
    return np.maximum(lam + alpha * (load - inst.budgets), 0.0)


def auxiliary_update(y: np.ndarray, z: np.ndarray, beta: float) -> np.ndarray:
    """Damped move y + β(z − y) toward the second maximizer."""
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    return y + beta * (z - y)


def initial_state(inst: ProblemInstance) -> AlgorithmState:
    """λ = 0 and y at the equal-power split P_k/|U(k)|."""
    access = inst.access
    share = inst.budgets[access.var_antenna] / access.served_counts[access.var_antenna]
    return AlgorithmState(
        p=np.zeros(access.num_variables),
        y=share.astype(float),
        lam=np.zeros(inst.num_antennas),
    )


def lyapunov_value(
    state: AlgorithmState,
    reference: StationaryPoint,
    step_sizes: StepSizes,
    proximal: np.ndarray,
) -> float:
    """
    v = Σ_k (λ_k − λ*_k)²/α_k + Σ_i c_i·(y_i − y*_i)²/β.

    ``proximal`` is the per-variable diagonal of V. Idle antennas (α_k = 0)
    carry no dual and are left out.
    """
    used = step_sizes.alpha > 0
    dl = state.lam[used] - reference.lam[used]
    dy = state.y - reference.y
    return float(np.sum(dl * dl / step_sizes.alpha[used]) + np.dot(proximal, dy * dy) / step_sizes.beta)


def iteration_record(
    inst: ProblemInstance,
    config: RunConfig,
    p: np.ndarray,
    lam: np.ndarray,
    y: np.ndarray,
    lam_next: np.ndarray,
    y_next: np.ndarray,
    t: int,
    messages: int = 0,
) -> IterationRecord:
    """Diagnostics of iteration t, evaluated at (p(t), λ(t), y(t))."""
    value = lagrangian_value(inst, p, lam, y)
    gap = value - config.reference.value if config.reference is not None else None
    lyap = None
    if config.record_lyapunov:
        lyap = lyapunov_value(AlgorithmState(p, y, lam), config.reference,
                              config.step_sizes, inst.proximal_per_variable)
    return IterationRecord(
        t=t,
        lagrangian_value=value,
        dual_gap=gap,
        lambda_step_inf=float(np.max(np.abs(lam_next - lam), initial=0.0)),
        y_step_inf=float(np.max(np.abs(y_next - y), initial=0.0)),
        messages_exchanged=messages,
        lyapunov=lyap,
        lam=lam.copy() if config.record_iterates else None,
        y=y.copy() if config.record_iterates else None,
    )


# ─── Driver ───────────────────────────────────────────────────────────────────

def run(inst: ProblemInstance, config: RunConfig) -> RunResult:
    """
    Iterate until both the λ step and the y step are within ``stop_tol`` in
    the ∞-norm, or ``max_iterations`` is reached.

    Raises ``NotConvergedError`` on budget exhaustion; the last state and trace
    are on the exception's ``result``.
    """
    steps = config.step_sizes
    start = config.initial_state.copy() if config.initial_state is not None else initial_state(inst)
    start.check_shapes(inst)
    lam, y, p = start.lam.astype(float), start.y.astype(float), start.p.astype(float)

    trace: List[IterationRecord] = []
    converged = False
    t = 0
    logger.debug("run start: %d antennas, %d users, policy=%s",
                 inst.num_antennas, inst.num_users, steps.policy)

    while t < config.max_iterations:
        p = lagrangian_maximize(inst, lam, y)
        lam_next = dual_update(lam, p, inst, steps.alpha)
        z = lagrangian_maximize(inst, lam_next, y)
        y_next = auxiliary_update(y, z, steps.beta)

        record = iteration_record(inst, config, p, lam, y, lam_next, y_next, t)
        trace.append(record)
        lam, y = lam_next, y_next
        t += 1
        if max(record.lambda_step_inf, record.y_step_inf) <= config.stop_tol:
            converged = True
            break

    state = AlgorithmState(p=p, y=y, lam=lam, t=t, diagnostics=trace)
    result = RunResult(state=state, converged=converged, trace=trace)
    if not converged:
        logger.warning("no convergence after %d iterations (last steps λ=%.3g, y=%.3g)",
                       t, trace[-1].lambda_step_inf, trace[-1].y_step_inf)
        raise NotConvergedError(f"not converged after {t} iterations", result=result)
    logger.debug("converged in %d iterations", t)
    return result


def run_to_reference(
    inst: ProblemInstance,
    step_sizes: StepSizes,
    stop_tol: float = 1e-11,
    max_iterations: int = 200000,
) -> StationaryPoint:
    """Tight-tolerance run whose end point serves as (y*, λ*, f(y*))."""
    result = run(inst, RunConfig(step_sizes=step_sizes, max_iterations=max_iterations, stop_tol=stop_tol))
    return result.stationary_point(inst)


def rerun_with_new_gains(previous: RunResult, inst: ProblemInstance, config: RunConfig) -> RunResult:
    """Warm start after a channel change: keep the last λ and y, swap in new gains."""
    warm = previous.state.copy()
    warm.t = 0
    warm.diagnostics = []
    return run(inst, replace(config, initial_state=warm))


# ─── Stationarity and analysis checks ─────────────────────────────────────────

@dataclass
class StationarityReport:
    ok: bool
    maximizer_residual: float
    feasibility_residual: float
    dual_feasibility_residual: float
    slackness_residual: float
    violations: List[str] = field(default_factory=list)


def check_stationary(state: AlgorithmState, inst: ProblemInstance, tol: float) -> StationarityReport:
    """
    Fixed-point test on (y, λ): y re-maximizes the Lagrangian, E·y ≤ P,
    λ ≥ 0, and λ_k·(E·y − P)_k = 0 for every antenna, each within ``tol``.
    """
    z = lagrangian_maximize(inst, state.lam, state.y)
    excess = inst.access.antenna_load(state.y) - inst.budgets

    maximizer = float(np.max(np.abs(z - state.y), initial=0.0))
    feasibility = float(np.max(excess, initial=0.0))
    dual = float(np.max(-state.lam, initial=0.0))
    slackness = float(np.max(np.abs(state.lam * excess), initial=0.0))

    violations = []
    if maximizer > tol:
        violations.append(f"y is not the Lagrangian maximizer (off by {maximizer:.3g})")
    if feasibility > tol:
        violations.append(f"budget exceeded by {feasibility:.3g}")
    if dual > tol:
        violations.append(f"negative dual {-dual:.3g}")
    if slackness > tol:
        violations.append(f"complementary slackness off by {slackness:.3g}")
    return StationarityReport(
        ok=not violations,
        maximizer_residual=maximizer,
        feasibility_residual=feasibility,
        dual_feasibility_residual=dual,
        slackness_residual=slackness,
        violations=violations,
    )


def maximizer_subgradient(inst: ProblemInstance, p: np.ndarray, lam: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Subgradient of f at a Lagrangian maximizer, read off Eᵀλ + V(p − y)."""
    return lam[inst.access.var_antenna] + inst.proximal_per_variable * (p - y)


def two_maximizer_slack(
    inst: ProblemInstance,
    y: np.ndarray,
    lam1: np.ndarray,
    lam2: np.ndarray,
    reference: StationaryPoint,
    factor: float = 0.25,
) -> float:
    """
    factor·(λ₂−λ₁)ᵀ E V⁻¹ Eᵀ (λ₂−λ₁) − [∇f(p₁) − ∇f(y*)]ᵀ(p₂ − y*).

    Nonnegative when the two-maximizer inequality holds. ``factor=0.5`` gives
    the looser bound of the older analysis.
    """
    p1 = lagrangian_maximize(inst, lam1, y)
    p2 = lagrangian_maximize(inst, lam2, y)
    grad1 = maximizer_subgradient(inst, p1, lam1, y)
    grad_star = reference.lam[inst.access.var_antenna]
    lhs = float(np.dot(grad1 - grad_star, p2 - reference.y))
    d = (lam2 - lam1)[inst.access.var_antenna]
    rhs = factor * float(np.sum(d * d / inst.proximal_per_variable))
    return rhs - lhs
