import itertools
import math

import numpy as np
import pytest

from dascomp.core.engine import RunConfig, run, run_to_reference
from dascomp.core.model import (
    LN2,
    AccessMap,
    ProblemInstance,
    build_instance,
    compute_theorem1_step_sizes,
)

DESK_SEEDS = range(50)


def random_instance(
    seed: int,
    max_antennas: int = 8,
    max_users: int = 6,
    max_serving: int = 3,
    gain_decades: float = 1.0,
    proximal: float = 3.0,
) -> ProblemInstance:
    """Random desk-scale instance; gains are log-uniform over ±``gain_decades`` decades."""
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, max_antennas + 1))
    N = int(rng.integers(1, max_users + 1))
    serving = []
    for _ in range(N):
        size = int(rng.integers(1, min(max_serving, K) + 1))
        serving.append(sorted(int(k) for k in rng.choice(K, size=size, replace=False)))
    access = AccessMap.from_serving_sets(K, serving)
    return build_instance(
        access,
        gains=10.0 ** rng.uniform(-gain_decades, gain_decades, size=access.num_variables),
        weights=rng.uniform(0.5, 2.0, size=N),
        budgets=rng.uniform(0.5, 2.0, size=K),
        proximal=proximal,
    )


def single_link(gamma: float = 1.0, budget: float = 1.0, weight: float = 1.0, proximal: float = 3.0) -> ProblemInstance:
    return build_instance(AccessMap.from_serving_sets(1, [[0]]), [gamma], weight, budget, proximal)


def brute_force_subproblem(gammas, weight, proximal, duals, aux):
    """
    Best KKT point over every candidate active set, each solved from the
    quadratic in s with numpy's polynomial roots. Returns (value, powers).
    """
    g = np.asarray(gammas, dtype=float)
    lam = np.asarray(duals, dtype=float)
    y = np.asarray(aux, dtype=float)
    c, w = proximal, weight

    def objective(p):
        return w * math.log1p(float(np.dot(p, g))) / LN2 - float(np.dot(lam, p)) - 0.5 * c * float(np.sum((p - y) ** 2))

    best_p = np.zeros(len(g))
    best = objective(best_p)
    for size in range(1, len(g) + 1):
        for omega in itertools.combinations(range(len(g)), size):
            idx = list(omega)
            mu = float(np.sum(g[idx] * (lam[idx] - c * y[idx])))
            gbar = w * float(np.sum(g[idx] ** 2)) / LN2
            roots = np.roots([c, c + mu, mu - gbar])
            real = [r.real for r in roots if abs(r.imag) < 1e-12 and r.real > -1]
            if not real:
                continue
            s = max(real)
            p = np.zeros(len(g))
            p[idx] = y[idx] + (w * g[idx] / (LN2 * (1 + s)) - lam[idx]) / c
            if np.any(p < -1e-12):
                continue
            p = np.maximum(p, 0.0)
            value = objective(p)
            if value > best:
                best, best_p = value, p
    return best, best_p


@pytest.fixture(scope="session")
def desk_instances():
    return [random_instance(seed) for seed in DESK_SEEDS]


@pytest.fixture(scope="session")
def desk_runs(desk_instances):
    """(instance, converged run, tight reference) for every desk instance."""
    out = []
    for inst in desk_instances:
        steps = compute_theorem1_step_sizes(inst)
        reference = run_to_reference(inst, steps)
        result = run(inst, RunConfig(step_sizes=steps, max_iterations=100000, stop_tol=1e-10))
        out.append((inst, result, reference))
    return out
