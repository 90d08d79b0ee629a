import math
from fractions import Fraction

import numpy as np
import pytest

from dascomp.core.model import (
    AccessMap,
    StepSizes,
    build_instance,
    compute_lin2006_step_sizes,
    compute_theorem1_step_sizes,
    find_violations,
    instance_from_dict,
    instance_to_dict,
    load_instance,
    manual_step_sizes,
    save_instance,
    step_size_psd_margin,
    validate_instance,
    weighted_sum_rate,
    weighted_sum_rate_gradient,
)
from dascomp.exceptions import InvalidInstanceError

from conftest import random_instance


def _kinds(inst):
    return [v.kind for v in find_violations(inst)]


# ─── AccessMap ────────────────────────────────────────────────────────────────

def test_flat_layout_is_user_major():
    access = AccessMap.from_serving_sets(3, [[2, 0], [1], [0, 1, 2]])
    assert access.serving_sets == ((0, 2), (1,), (0, 1, 2))
    assert list(access.var_antenna) == [0, 2, 1, 0, 1, 2]
    assert list(access.var_user) == [0, 0, 1, 2, 2, 2]
    assert access.variable_index(2, 0) == 1
    assert access.served_sets == ((0, 2), (1, 2), (0, 2))
    with pytest.raises(KeyError):
        access.variable_index(1, 0)


@pytest.mark.parametrize("seed", range(10))
def test_serving_served_round_trip(seed):
    inst = random_instance(seed)
    access = inst.access
    rebuilt = [[] for _ in range(access.num_users)]
    for k, served in enumerate(access.served_sets):
        for n in served:
            rebuilt[n].append(k)
    assert tuple(tuple(r) for r in rebuilt) == access.serving_sets


@pytest.mark.parametrize("seed", range(10))
def test_incidence_sums(seed):
    access = random_instance(seed).access
    rows, cols = access.incidence_sums()
    assert np.array_equal(rows, access.served_counts)
    assert np.all(cols == 1)


def test_antenna_load_and_user_sum():
    access = AccessMap.from_serving_sets(2, [[0, 1], [1]])
    x = np.array([1.0, 2.0, 3.0])
    assert np.allclose(access.antenna_load(x), [1.0, 5.0])
    assert np.allclose(access.user_sum(x), [3.0, 3.0])


# ─── Validation ───────────────────────────────────────────────────────────────

def test_minimal_instance_is_valid():
    inst = build_instance(AccessMap.from_serving_sets(2, [[0, 1]]), [0.5, 2.0])
    assert validate_instance(inst) is inst


def test_zero_gain_is_reported_with_its_pair():
    inst = build_instance(AccessMap.from_serving_sets(2, [[0, 1]]), [0.0, 2.0])
    with pytest.raises(InvalidInstanceError) as err:
        validate_instance(inst)
    [violation] = err.value.violations
    assert violation.kind == "NonPositiveGain"
    assert violation.index == {"k": 0, "n": 0}
    assert "NonPositiveGain(k=0, n=0)" in str(err.value)


def test_inconsistent_access_map():
    access = AccessMap(num_antennas=1, num_users=1, serving_sets=((0,),), served_sets=((),))
    inst = build_instance(access, [1.0])
    assert _kinds(inst) == ["InconsistentAccessMap"]


def test_all_violations_are_collected():
    access = AccessMap.from_serving_sets(2, [[0], []])
    inst = build_instance(access, [np.nan], weights=[1.0, -1.0], budgets=[1.0, 0.0])
    kinds = _kinds(inst)
    assert "EmptyServingSet" in kinds
    assert "NonPositiveGain" in kinds
    assert "NonPositiveWeight" in kinds
    assert "NonPositiveBudget" in kinds


def test_out_of_range_and_duplicate_antennas():
    access = AccessMap.from_serving_sets(2, [[0, 0, 5]])
    kinds = _kinds(build_instance(access, [1.0, 1.0, 1.0]))
    assert "DuplicateServingAntenna" in kinds
    assert "IndexOutOfRange" in kinds


def test_shape_mismatch():
    access = AccessMap.from_serving_sets(1, [[0]])
    inst = build_instance(access, [1.0, 2.0])
    assert _kinds(inst) == ["ShapeMismatch"]


# ─── Step sizes ───────────────────────────────────────────────────────────────

def _served_by_one_antenna(num_users, proximal):
    access = AccessMap.from_serving_sets(1, [[0]] * num_users)
    return build_instance(access, [1.0] * num_users, proximal=proximal)


def test_theorem1_single_user():
    steps = compute_theorem1_step_sizes(_served_by_one_antenna(1, 3.0))
    assert steps.alpha[0] == 2.0
    assert steps.beta == 1.0


def test_theorem1_uses_smallest_proximal_weight():
    inst = _served_by_one_antenna(10, [3.0 + n for n in range(10)])
    steps = compute_theorem1_step_sizes(inst)
    assert steps.alpha[0] == math.nextafter(0.2, 0.0)
    assert steps.alpha[0] < 0.2
    assert Fraction(steps.alpha[0]) <= Fraction(1, 5)


def test_theorem1_keeps_values_already_below_the_bound():
    # float(4/3) already sits below 4/3, and 1/2 is exact
    alpha = compute_theorem1_step_sizes(_served_by_one_antenna(2, 4.0)).alpha[0]
    assert alpha == 4 / 3
    assert Fraction(alpha) < Fraction(4, 3)
    assert compute_theorem1_step_sizes(_served_by_one_antenna(4, 3.0)).alpha[0] == 0.5


def test_theorem1_idle_antenna_gets_zero():
    inst = build_instance(AccessMap.from_serving_sets(3, [[0], [0]]), [1.0, 1.0])
    steps = compute_theorem1_step_sizes(inst)
    assert steps.alpha[1] == 0.0
    assert steps.alpha[2] == 0.0
    assert step_size_psd_margin(inst, steps)[1] is None


@pytest.mark.parametrize("seed", range(50))
def test_theorem1_psd_condition_exact(seed):
    inst = random_instance(seed)
    inst = build_instance(inst.access, inst.gains, inst.weights, inst.budgets,
                          proximal=np.random.default_rng(seed).uniform(0.5, 7.0, size=inst.num_users))
    for margin in step_size_psd_margin(inst, compute_theorem1_step_sizes(inst)):
        assert margin is None or margin >= 0


@pytest.mark.parametrize("factor", [1e-2, 1e2, 7.3])
def test_step_sizes_ignore_gain_scale(factor):
    inst = random_instance(3)
    base = compute_theorem1_step_sizes(inst)
    scaled = compute_theorem1_step_sizes(inst.scaled(factor))
    assert base.alpha.tobytes() == scaled.alpha.tobytes()


def test_lin2006_examples():
    assert compute_lin2006_step_sizes(_served_by_one_antenna(1, 3.0)).alpha[0] == 1.5
    steps = compute_lin2006_step_sizes(_served_by_one_antenna(10, 3.0))
    assert steps.alpha[0] == pytest.approx(0.15, rel=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_lin2006_is_not_larger_on_busiest_antenna(seed):
    inst = random_instance(seed)
    theorem1 = compute_theorem1_step_sizes(inst)
    lin = compute_lin2006_step_sizes(inst)
    assert len(set(lin.alpha.tolist())) == 1
    busiest = int(np.argmax(inst.access.served_counts))
    assert lin.alpha[busiest] <= theorem1.alpha[busiest]


def test_manual_step_sizes_zero_idle_antennas():
    inst = build_instance(AccessMap.from_serving_sets(2, [[0]]), [1.0])
    steps = manual_step_sizes(inst, 5.0)
    assert list(steps.alpha) == [5.0, 0.0]
    assert steps.policy == "manual"


@pytest.mark.parametrize("beta", [0.0, 1.5, -0.1])
def test_step_sizes_reject_bad_beta(beta):
    with pytest.raises(ValueError):
        StepSizes(alpha=np.array([1.0]), beta=beta)


# ─── Rates ────────────────────────────────────────────────────────────────────

def test_weighted_sum_rate_unit_link():
    inst = build_instance(AccessMap.from_serving_sets(1, [[0]]), [1.0], weights=2.0)
    assert weighted_sum_rate(inst, np.array([1.0])) == pytest.approx(2.0)
    assert weighted_sum_rate(inst, np.array([3.0])) == pytest.approx(4.0)


@pytest.mark.parametrize("seed", range(10))
def test_rate_gradient_matches_finite_differences(seed):
    inst = random_instance(seed)
    p = np.random.default_rng(seed).uniform(0.1, 1.0, size=inst.access.num_variables)
    grad = weighted_sum_rate_gradient(inst, p)
    h = 1e-6
    for i in range(len(p)):
        e = np.zeros_like(p)
        e[i] = h
        fd = (weighted_sum_rate(inst, p + e) - weighted_sum_rate(inst, p - e)) / (2 * h)
        assert fd == pytest.approx(grad[i], rel=1e-6, abs=1e-9)


# ─── JSON ─────────────────────────────────────────────────────────────────────

def test_instance_json_round_trip(tmp_path):
    inst = random_instance(7)
    path = tmp_path / "instance.json"
    save_instance(inst, path)
    loaded = load_instance(path)
    assert loaded.access.serving_sets == inst.access.serving_sets
    assert np.array_equal(loaded.gains, inst.gains)
    assert np.array_equal(loaded.budgets, inst.budgets)
    assert np.array_equal(loaded.proximal, inst.proximal)


def test_instance_json_rejects_orphan_and_missing_gains():
    data = instance_to_dict(build_instance(AccessMap.from_serving_sets(2, [[0, 1]]), [1.0, 2.0]))
    data["gains"] = [[0, 0, 1.0], [1, 1, 2.0]]
    data["N"] = 1
    with pytest.raises(InvalidInstanceError) as err:
        instance_from_dict(data)
    kinds = {v.kind for v in err.value.violations}
    assert kinds == {"OrphanGain", "MissingGain"}


def test_instance_json_rejects_unknown_fields():
    data = instance_to_dict(build_instance(AccessMap.from_serving_sets(1, [[0]]), [1.0]))
    data["extra"] = 1
    with pytest.raises(InvalidInstanceError):
        instance_from_dict(data)
