"""
Closed-form solver for one user's Lagrangian subproblem.

For user n and fixed duals λ and auxiliaries y the subproblem is

    max_{p ≥ 0}  w·log2(1 + Σ p_k γ_k) − Σ λ_k p_k − (c/2)·Σ (p_k − y_k)²

On a known active set Ω the KKT conditions collapse to a quadratic in
s = Σ_{k∈Ω} p_k γ_k, whose larger root gives every p_k directly. The active
set is found by starting from all serving antennas and dropping every
coordinate whose closed-form value is nonpositive, which is safe to do for all
of them at once.
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from dascomp.core.model import LN2, ProblemInstance, SubproblemSolution

# Coordinates at or below this many Watts leave the active set
ELIMINATION_TOL = 1e-12

ELIMINATION_RULES = ("all", "most_negative")


@dataclass(frozen=True, eq=False)
class SubproblemInput:
    """Everything user n's host needs: its gains, weight, proximal weight, duals and auxiliaries."""

    user: int
    antennas: Tuple[int, ...]
    gammas: np.ndarray
    weight: float
    proximal: float
    duals: np.ndarray
    auxiliaries: np.ndarray


def subproblem_input(inst: ProblemInstance, user: int, lam: np.ndarray, y: np.ndarray) -> SubproblemInput:
    sl = inst.access.user_slice(user)
    antennas = inst.access.serving_sets[user]
    return SubproblemInput(
        user=user,
        antennas=antennas,
        gammas=inst.gains[sl],
        weight=float(inst.weights[user]),
        proximal=float(inst.proximal[user]),
        duals=lam[list(antennas)],
        auxiliaries=y[sl],
    )


def quadratic_root(c: float, mu: float, gamma_bar: float) -> float:
    """
    Larger root of c·s² + (c + μ)·s + μ − γ̄ = 0.

    The discriminant is written as (c − μ)² + 4cγ̄, which is positive for
    c, γ̄ > 0. The root is always above −1 since the quadratic equals −γ̄ at −1.
    """
    b = c + mu
    root = math.sqrt((c - mu) ** 2 + 4.0 * c * gamma_bar)
    if b >= 0:
        # b + root >= 2c, no cancellation
        return 2.0 * (gamma_bar - mu) / (b + root)
    return (root - b) / (2.0 * c)


def _quadratic_roots(c: np.ndarray, mu: np.ndarray, gamma_bar: np.ndarray) -> np.ndarray:
    b = c + mu
    root = np.sqrt((c - mu) ** 2 + 4.0 * c * gamma_bar)
    return np.where(b >= 0, 2.0 * (gamma_bar - mu) / (b + root), (root - b) / (2.0 * c))


def solve_subproblem(
    inp: SubproblemInput,
    elimination: str = "all",
    tol: float = ELIMINATION_TOL,
) -> SubproblemSolution:
    """
    Maximize user n's subproblem over p ≥ 0.

    ``elimination="all"`` drops every nonpositive coordinate per pass;
    ``"most_negative"`` drops only the smallest one, the slower older rule.
    Either way at most |R(n)| passes are needed.
    """
    if elimination not in ELIMINATION_RULES:
        raise ValueError(f"unknown elimination rule {elimination!r}")

    g, lam, y = inp.gammas, inp.duals, inp.auxiliaries
    c, w = inp.proximal, inp.weight
    active = np.ones(len(g), dtype=bool)
    p = np.zeros(len(g))
    passes = 0

    while active.any():
        passes += 1
        ga = g[active]
        mu = float(np.sum(ga * (lam[active] - c * y[active])))
        gamma_bar = w * float(np.sum(ga * ga)) / LN2
        s = quadratic_root(c, mu, gamma_bar)
        candidate = y[active] + (w * ga / (LN2 * (1.0 + s)) - lam[active]) / c

        low = candidate <= tol
        if not low.any():
            p[active] = candidate
            break
        idx = np.flatnonzero(active)
        if elimination == "all":
            active[idx[low]] = False
        else:
            active[idx[np.argmin(candidate)]] = False

    return SubproblemSolution(
        user=inp.user,
        antennas=tuple(inp.antennas),
        omega=tuple(inp.antennas[i] for i in np.flatnonzero(active)),
        s=float(np.dot(p, g)),
        powers=p,
        passes=passes,
    )


def solve_subproblems(
    inst: ProblemInstance,
    lam: np.ndarray,
    y: np.ndarray,
    tol: float = ELIMINATION_TOL,
) -> np.ndarray:
    """
    Every user's subproblem at once, with multi-elimination.

    Same arithmetic as :func:`solve_subproblem`, run over the flat layout so a
    Lagrangian maximization costs a few array passes instead of N Python calls.
    """
    access = inst.access
    g = inst.gains
    c = inst.proximal_per_variable
    w = inst.weights_per_variable
    lam_v = lam[access.var_antenna]
    user_of = access.var_user

    active = np.ones(access.num_variables, dtype=bool)
    pending = np.ones(access.num_users, dtype=bool)
    p = np.zeros(access.num_variables)
    max_passes = max((len(r) for r in access.serving_sets), default=0)

    for _ in range(max_passes):
        ga = np.where(active, g, 0.0)
        mu = access.user_sum(ga * (lam_v - c * y))
        gamma_bar = inst.weights * access.user_sum(ga * ga) / LN2
        s = _quadratic_roots(inst.proximal, mu, gamma_bar)
        candidate = y + (w * g / (LN2 * (1.0 + s[user_of])) - lam_v) / c

        low = active & (candidate <= tol)
        has_low = access.user_sum(low.astype(float)) > 0
        done = pending & ~has_low
        settle = done[user_of] & active
        p[settle] = candidate[settle]

        pending &= has_low
        active &= ~low
        pending &= access.user_sum(active.astype(float)) > 0
        if not pending.any():
            break
    return p


def subproblem_gradient(inp: SubproblemInput, p: np.ndarray) -> np.ndarray:
    s = float(np.dot(p, inp.gammas))
    return (
        inp.weight * inp.gammas / (LN2 * (1.0 + s))
        - inp.duals
        - inp.proximal * (p - inp.auxiliaries)
    )


def subproblem_objective(inp: SubproblemInput, p: np.ndarray) -> float:
    s = float(np.dot(p, inp.gammas))
    return (
        inp.weight * math.log1p(s) / LN2
        - float(np.dot(inp.duals, p))
        - 0.5 * inp.proximal * float(np.sum((p - inp.auxiliaries) ** 2))
    )


def kkt_residual(inp: SubproblemInput, solution: SubproblemSolution) -> float:
    """
    Largest KKT violation: |∂B/∂p| on positive coordinates, max(0, ∂B/∂p) on zeros.
    """
    p = solution.powers
    if p.shape != inp.gammas.shape:
        raise ValueError("solution and input cover different antennas")
    if p.size == 0:
        return 0.0
    grad = subproblem_gradient(inp, p)
    residual = np.where(p > 0, np.abs(grad), np.maximum(grad, 0.0))
    return float(residual.max())
