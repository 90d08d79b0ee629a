import numpy as np
import pytest

from dascomp.api.baselines import oracle_solve
from dascomp.core.engine import (
    RunConfig,
    StationaryPoint,
    auxiliary_update,
    check_stationary,
    dual_update,
    initial_state,
    lagrangian_maximize,
    two_maximizer_slack,
    lyapunov_value,
    rerun_with_new_gains,
    run,
    run_to_reference,
)
from dascomp.core.model import (
    AccessMap,
    AlgorithmState,
    StepSizes,
    build_instance,
    compute_theorem1_step_sizes,
    weighted_sum_rate,
)
from dascomp.exceptions import NotConvergedError

from conftest import DESK_SEEDS, random_instance, single_link


def _config(inst, **kwargs):
    return RunConfig(step_sizes=compute_theorem1_step_sizes(inst), **kwargs)


# ─── Updates ──────────────────────────────────────────────────────────────────

def test_dual_update_projects_onto_nonnegative():
    inst = build_instance(AccessMap.from_serving_sets(2, [[0, 1]]), [1.0, 1.0], budgets=1.0)
    lam = np.array([0.5, 0.1])
    p = np.array([2.0, 0.0])
    out = dual_update(lam, p, inst, np.array([0.5, 0.5]))
    assert np.allclose(out, [1.0, 0.0])


def test_auxiliary_update_moves_toward_maximizer():
    y = np.array([1.0, 2.0])
    z = np.array([3.0, 0.0])
    assert np.allclose(auxiliary_update(y, z, 1.0), z)
    assert np.allclose(auxiliary_update(y, z, 0.5), [2.0, 1.0])
    with pytest.raises(ValueError):
        auxiliary_update(y, z, 0.0)


def test_initial_state_splits_budget_equally():
    inst = build_instance(AccessMap.from_serving_sets(2, [[0, 1], [1]]), [1.0, 1.0, 1.0], budgets=[2.0, 4.0])
    state = initial_state(inst)
    assert np.allclose(state.y, [2.0, 2.0, 2.0])
    assert np.all(state.lam == 0)
    assert state.t == 0


# ─── Convergence ──────────────────────────────────────────────────────────────

def test_single_link_uses_full_budget():
    inst = single_link(gamma=1.0, budget=1.0)
    result = run(inst, _config(inst, max_iterations=50000, stop_tol=1e-12))
    assert result.converged
    assert result.power[0] == pytest.approx(1.0, abs=1e-8)
    assert result.state.lam[0] > 0


def test_warm_start_at_fixed_point_stops_quickly():
    inst = random_instance(4)
    steps = compute_theorem1_step_sizes(inst)
    ref = run_to_reference(inst, steps, stop_tol=1e-12)
    warm = AlgorithmState(p=ref.y.copy(), y=ref.y.copy(), lam=ref.lam.copy())
    result = run(inst, RunConfig(step_sizes=steps, stop_tol=1e-9, initial_state=warm))
    assert result.iterations <= 5


def test_matches_oracle_on_desk_instances(desk_runs):
    for inst, result, _ in desk_runs:
        oracle = oracle_solve(inst)
        assert weighted_sum_rate(inst, result.power) == pytest.approx(oracle.value, rel=1e-5)
        assert check_stationary(result.state, inst, 1e-6).ok
        assert np.all(inst.access.antenna_load(result.power) <= inst.budgets + 1e-6)


def test_trace_has_one_record_per_iteration(desk_runs):
    inst, result, _ = desk_runs[0]
    assert len(result.trace) == result.iterations
    assert [r.t for r in result.trace] == list(range(result.iterations))
    assert result.trace[0].lam is None and result.trace[0].y is None
    assert result.trace[-1].lambda_step_inf <= 1e-10
    assert result.trace[-1].y_step_inf <= 1e-10


@pytest.mark.parametrize("factor", [1e-2, 1e2])
@pytest.mark.parametrize("seed", DESK_SEEDS)
def test_converges_across_gain_scales(seed, factor):
    base = random_instance(seed)
    inst = base.scaled(factor)
    steps = compute_theorem1_step_sizes(inst)
    assert np.array_equal(steps.alpha, compute_theorem1_step_sizes(base).alpha)
    result = run(inst, RunConfig(step_sizes=steps, max_iterations=500000, stop_tol=1e-9))
    assert check_stationary(result.state, inst, 1e-6).ok


def test_exhausted_budget_raises_with_last_state():
    inst = random_instance(1)
    with pytest.raises(NotConvergedError) as err:
        run(inst, _config(inst, max_iterations=1, stop_tol=0.0))
    result = err.value.result
    assert result.iterations == 1
    assert not result.converged
    assert len(result.trace) == 1


def test_run_config_rejects_bad_values():
    inst = single_link()
    steps = compute_theorem1_step_sizes(inst)
    with pytest.raises(ValueError):
        RunConfig(step_sizes=steps, max_iterations=0)
    with pytest.raises(ValueError):
        RunConfig(step_sizes=steps, stop_tol=-1.0)
    with pytest.raises(ValueError):
        RunConfig(step_sizes=steps, record_lyapunov=True)


def test_initial_state_shape_is_checked():
    inst = build_instance(AccessMap.from_serving_sets(2, [[0, 1]]), [1.0, 1.0])
    bad = AlgorithmState(p=np.zeros(1), y=np.zeros(1), lam=np.zeros(1))
    with pytest.raises(ValueError):
        run(inst, _config(inst, initial_state=bad))


# ─── Lyapunov function ────────────────────────────────────────────────────────

def test_lyapunov_value_example():
    ref = StationaryPoint(y=np.array([1.0, 1.0]), lam=np.array([0.5]), value=0.0)
    state = AlgorithmState(p=np.zeros(2), y=np.array([2.0, 1.0]), lam=np.array([1.5]))
    steps = StepSizes(alpha=np.array([0.5]), beta=1.0)
    # (1.5-0.5)²/0.5 + 3·(2-1)²
    assert lyapunov_value(state, ref, steps, np.array([3.0, 3.0])) == pytest.approx(5.0)


def test_lyapunov_value_skips_idle_antennas():
    ref = StationaryPoint(y=np.zeros(1), lam=np.zeros(2), value=0.0)
    state = AlgorithmState(p=np.zeros(1), y=np.zeros(1), lam=np.array([0.0, 7.0]))
    steps = StepSizes(alpha=np.array([1.0, 0.0]))
    assert lyapunov_value(state, ref, steps, np.array([3.0])) == 0.0


@pytest.mark.parametrize("index", range(len(DESK_SEEDS)))
def test_lyapunov_never_increases(desk_runs, index):
    inst, _, ref = desk_runs[index]
    config = RunConfig(step_sizes=compute_theorem1_step_sizes(inst), max_iterations=100000, stop_tol=1e-10,
                       record_lyapunov=True, reference=ref)
    values = np.array([r.lyapunov for r in run(inst, config).trace])
    assert np.diff(values).max(initial=0.0) <= 1e-9


# ─── Two-maximizer inequality ─────────────────────────────────────────────────

@pytest.mark.parametrize("seed", range(10))
def test_two_maximizer_inequality(seed):
    inst = random_instance(seed)
    ref = run_to_reference(inst, compute_theorem1_step_sizes(inst), stop_tol=1e-12)
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        y = rng.uniform(0.0, 2.0, size=inst.access.num_variables)
        lam1 = rng.uniform(0.0, 2.0, size=inst.num_antennas)
        lam2 = rng.uniform(0.0, 2.0, size=inst.num_antennas)
        assert two_maximizer_slack(inst, y, lam1, lam2, ref) >= -1e-9


# ─── Stationarity ─────────────────────────────────────────────────────────────

def test_check_stationary_reports_each_failure():
    inst = single_link()
    lagrangian_free = AlgorithmState(p=np.zeros(1), y=np.array([2.0]), lam=np.array([-0.5]))
    report = check_stationary(lagrangian_free, inst, 1e-6)
    assert not report.ok
    assert report.feasibility_residual == pytest.approx(1.0)
    assert report.dual_feasibility_residual == pytest.approx(0.5)
    assert report.maximizer_residual > 1e-6
    assert len(report.violations) == 4


def test_check_stationary_accepts_converged_state(desk_runs):
    inst, result, _ = desk_runs[1]
    assert check_stationary(result.state, inst, 1e-6).violations == []


def test_fixed_point_is_a_lagrangian_maximizer(desk_runs):
    for inst, result, _ in desk_runs[:10]:
        z = lagrangian_maximize(inst, result.state.lam, result.state.y)
        assert np.max(np.abs(z - result.state.y)) <= 1e-7


# ─── Warm restart ─────────────────────────────────────────────────────────────

def test_rerun_after_small_gain_change_is_faster():
    inst = random_instance(12)
    config = _config(inst, max_iterations=100000, stop_tol=1e-9)
    cold = run(inst, config)
    rng = np.random.default_rng(12)
    moved = inst.with_gains(inst.gains * rng.uniform(0.98, 1.02, size=inst.gains.shape))
    warm = rerun_with_new_gains(cold, moved, config)
    fresh = run(moved, config)
    assert warm.converged
    assert warm.iterations <= fresh.iterations
    assert np.allclose(warm.power, fresh.power, atol=1e-6)
