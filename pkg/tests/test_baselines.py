import itertools
import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.optimize import minimize

from dascomp.api.baselines import (
    OracleConfig,
    capped_simplex_project,
    equal_power_allocation,
    no_interference_bound,
    oracle_kkt_residual,
    oracle_solve,
    project_budgets,
    run_lin2006,
)
from dascomp.api.evaluation import true_rates
from dascomp.api.scenario import build_problem_instance, generate_scenario
from dascomp.core.engine import RunConfig, run
from dascomp.core.model import AccessMap, build_instance, compute_theorem1_step_sizes
from dascomp.exceptions import NotConvergedError

from conftest import random_instance


# ─── Projection ───────────────────────────────────────────────────────────────

@pytest.mark.parametrize("q, cap, expected", [
    ([0.2, 0.3], 1.0, [0.2, 0.3]),
    ([-1.0, 0.5], 1.0, [0.0, 0.5]),
    ([1.0, 1.0], 1.0, [0.5, 0.5]),
    ([3.0, 0.0, -2.0], 1.0, [1.0, 0.0, 0.0]),
    ([2.0, 1.5, 0.1], 2.0, [1.25, 0.75, 0.0]),
])
def test_capped_simplex_examples(q, cap, expected):
    assert np.allclose(capped_simplex_project(np.array(q), cap), expected)


def test_capped_simplex_rejects_bad_cap():
    with pytest.raises(ValueError):
        capped_simplex_project(np.array([1.0]), 0.0)


def test_capped_simplex_is_the_closest_point():
    rng = np.random.default_rng(0)
    for _ in range(100):
        q = rng.normal(0.0, 1.0, size=int(rng.integers(1, 6)))
        cap = float(rng.uniform(0.1, 2.0))
        x = capped_simplex_project(q, cap)
        found = minimize(
            lambda v: 0.5 * np.sum((v - q) ** 2),
            np.full(len(q), cap / (2 * len(q))),
            jac=lambda v: v - q,
            bounds=[(0.0, None)] * len(q),
            constraints=[{"type": "ineq", "fun": lambda v: cap - v.sum(), "jac": lambda v: -np.ones_like(v)}],
            method="SLSQP",
            options={"ftol": 1e-14, "maxiter": 500},
        )
        assert np.allclose(x, found.x, atol=1e-6)
        assert x.min() >= 0 and x.sum() <= cap + 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_project_budgets_matches_per_antenna_projection(seed):
    inst = random_instance(seed)
    rng = np.random.default_rng(seed)
    x = rng.normal(0.5, 1.0, size=inst.access.num_variables)
    out = project_budgets(inst, x)
    for k, served in enumerate(inst.access.served_sets):
        if not served:
            continue
        idx = [inst.access.variable_index(k, n) for n in served]
        assert np.allclose(out[idx], capped_simplex_project(x[idx], inst.budgets[k]), atol=1e-12)


# ─── Oracle ───────────────────────────────────────────────────────────────────

def test_oracle_single_link():
    inst = build_instance(AccessMap.from_serving_sets(1, [[0]]), [1.0], budgets=2.0)
    result = oracle_solve(inst)
    assert result.p[0] == pytest.approx(2.0, abs=1e-9)
    assert result.value == pytest.approx(math.log2(3.0), abs=1e-9)
    assert result.converged


def test_oracle_water_fills_shared_antenna():
    # 1/(1 + p) = 3/(1 + 3(1 - p)) at p = 1/6
    inst = build_instance(AccessMap.from_serving_sets(1, [[0], [0]]), [1.0, 3.0], budgets=1.0)
    result = oracle_solve(inst)
    assert np.allclose(result.p, [1.0 / 6.0, 5.0 / 6.0], atol=1e-6)


def test_oracle_equal_marginals_example():
    inst = build_instance(AccessMap.from_serving_sets(1, [[0], [0]]), [1.0, 2.0 / 3.0], budgets=1.0)
    result = oracle_solve(inst)
    # 1/(1 + p) = (2/3)/(1 + (2/3)(1 - p)) at p = 0.75
    assert np.allclose(result.p, [0.75, 0.25], atol=1e-6)


def test_oracle_separates_independent_antennas():
    inst = build_instance(AccessMap.from_serving_sets(2, [[0], [1]]), [1.0, 4.0], budgets=[1.0, 0.5])
    result = oracle_solve(inst)
    assert np.allclose(result.p, [1.0, 0.5], atol=1e-9)


@pytest.mark.parametrize("seed", range(20))
def test_oracle_kkt_residual_is_small(seed):
    inst = random_instance(seed)
    result = oracle_solve(inst)
    assert result.kkt_residual <= 1e-6
    assert np.all(inst.access.antenna_load(result.p) <= inst.budgets + 1e-9)


def test_oracle_kkt_residual_flags_equal_power():
    inst = build_instance(AccessMap.from_serving_sets(1, [[0], [0]]), [1.0, 10.0], budgets=1.0)
    assert oracle_kkt_residual(inst, equal_power_allocation(inst)) > 1e-3


def test_oracle_reports_non_convergence():
    inst = random_instance(30)
    with pytest.raises(NotConvergedError) as err:
        oracle_solve(inst, OracleConfig(max_iters=1, tol=1e-15))
    assert err.value.result.iterations == 1


@pytest.mark.parametrize("seed", range(5))
def test_oracle_warm_start_reaches_the_same_value(seed):
    inst = random_instance(seed)
    cold = oracle_solve(inst)
    near = run(inst, RunConfig(step_sizes=compute_theorem1_step_sizes(inst), max_iterations=200000)).power
    warm = oracle_solve(inst, start=near)
    assert warm.value == pytest.approx(cold.value, rel=1e-6)


def test_oracle_start_is_projected_and_shape_checked():
    inst = build_instance(AccessMap.from_serving_sets(2, [[0], [1]]), [1.0, 4.0], budgets=[1.0, 0.5])
    result = oracle_solve(inst, start=np.array([5.0, -1.0]))
    assert np.allclose(result.p, [1.0, 0.5], atol=1e-9)
    with pytest.raises(ValueError):
        oracle_solve(inst, start=np.zeros(3))


def test_oracle_agrees_with_brute_force_on_tiny_instance():
    inst = build_instance(AccessMap.from_serving_sets(2, [[0, 1], [0]]), [1.0, 0.5, 2.0], budgets=[1.0, 1.0])
    result = oracle_solve(inst)
    grid = np.linspace(0.0, 1.0, 201)
    best = -np.inf
    for a, b in itertools.product(grid, grid):
        # antenna 1 only serves user 0, so it always spends its full budget
        p = np.array([a, 1.0, min(b, 1.0 - a)])
        value = math.log2(1 + p[0] + 0.5 * p[1]) + math.log2(1 + 2.0 * p[2])
        best = max(best, value)
    assert result.value >= best - 1e-9


# ─── Equal power and lin2006 steps ────────────────────────────────────────────

def test_equal_power_allocation():
    inst = build_instance(AccessMap.from_serving_sets(2, [[0, 1], [0]]), [1.0, 1.0, 1.0], budgets=[2.0, 3.0])
    assert np.allclose(equal_power_allocation(inst), [1.0, 3.0, 1.0])
    assert np.allclose(inst.access.antenna_load(equal_power_allocation(inst)), inst.budgets)


def test_lin2006_reaches_the_same_point():
    inst = random_instance(14)
    config = RunConfig(step_sizes=compute_theorem1_step_sizes(inst), max_iterations=200000, stop_tol=1e-10)
    ours = run(inst, config)
    theirs = run_lin2006(inst, config)
    assert np.allclose(ours.power, theirs.power, atol=1e-6)


# ─── No-interference bound ────────────────────────────────────────────────────

@pytest.fixture(scope="module")
def small_scenario():
    return generate_scenario(cells=1, users_per_cell=4, per_user_count=3, seed=8)


def test_bound_for_lone_user_is_its_noise_limited_rate():
    scenario = generate_scenario(cells=1, users_per_cell=1, per_user_count=1, seed=4)
    budget = 0.1
    rates = no_interference_bound(scenario, budgets=budget)
    [k] = scenario.access.serving_sets[0]
    expected = math.log2(1.0 + budget * scenario.raw_gain[k, 0] / scenario.noise_power)
    assert rates[0] == pytest.approx(expected, rel=1e-6)


def test_bound_gives_zero_to_users_without_gain(small_scenario):
    raw = small_scenario.raw_gain.copy()
    raw[:, 2] = 0.0
    rates = no_interference_bound(replace(small_scenario, raw_gain=raw), budgets=0.1)
    assert rates[2] == 0.0
    assert np.all(rates[[0, 1, 3]] > 0)


def test_bound_warm_start_matches_cold_start(small_scenario):
    budget = 0.1
    inst = build_problem_instance(small_scenario, budgets=budget)
    result = run(inst, RunConfig(step_sizes=compute_theorem1_step_sizes(inst), max_iterations=200000))
    cold = no_interference_bound(small_scenario, budgets=budget)
    warm = no_interference_bound(small_scenario, budgets=budget, start=result.power)
    assert warm.sum() == pytest.approx(cold.sum(), rel=1e-6)


def test_bound_dominates_proposed_allocation(small_scenario):
    budget = 0.1
    inst = build_problem_instance(small_scenario, budgets=budget)
    result = run(inst, RunConfig(step_sizes=compute_theorem1_step_sizes(inst), max_iterations=200000, stop_tol=1e-9))
    bound = no_interference_bound(small_scenario, budgets=budget)
    achieved = true_rates(result.power, small_scenario)
    assert bound.sum() >= achieved.sum() - 1e-6
