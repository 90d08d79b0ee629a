"""
Shared domain types for the CoMP power-allocation problem.

Everything that flows between the solver, the engine, the distributed runtime
and the scenario generator is defined here:

- ``AccessMap``: the antenna/user serving relation and its flat variable layout
- ``ProblemInstance``: weights, budgets, normalized gains and proximal weights
- ``StepSizes``: dual step per antenna plus the auxiliary damping factor
- ``AlgorithmState`` / ``IterationRecord``: iterates and per-iteration diagnostics
- ``SubproblemSolution``: the per-user closed-form result

Power vectors are flat and user-major: user 0's serving antennas in ascending
order, then user 1's, and so on. The antenna/variable incidence matrix E is
never materialized; ``AccessMap.antenna_load`` is E·x.
"""

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from dascomp.exceptions import InvalidInstanceError

LN2 = math.log(2.0)

# Proximal weight c_n and auxiliary step beta used throughout the simulations
DEFAULT_PROXIMAL = 3.0
DEFAULT_BETA = 1.0

INSTANCE_FIELDS = ("K", "N", "serving_sets", "gains", "weights", "budgets", "proximal_params")


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


# ─── Access relation ──────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class AccessMap:
    """
    Bipartite antenna/user serving relation.

    ``serving_sets[n]`` is R(n), ``served_sets[k]`` is U(k). When
    ``served_sets`` is omitted it is derived from ``serving_sets``; passing it
    explicitly is how an inconsistent map reaches validation.
    """

    num_antennas: int
    num_users: int
    serving_sets: Tuple[Tuple[int, ...], ...]
    served_sets: Optional[Tuple[Tuple[int, ...], ...]] = None

    def __post_init__(self):
        serving = tuple(tuple(sorted(int(k) for k in r)) for r in self.serving_sets)
        object.__setattr__(self, "serving_sets", serving)

        if self.served_sets is None:
            served: List[List[int]] = [[] for _ in range(self.num_antennas)]
            for n, r in enumerate(serving):
                for k in r:
                    if 0 <= k < self.num_antennas:
                        served[k].append(n)
            object.__setattr__(self, "served_sets", tuple(tuple(u) for u in served))
        else:
            object.__setattr__(
                self, "served_sets",
                tuple(tuple(sorted(int(n) for n in u)) for u in self.served_sets),
            )

        lengths = [len(r) for r in serving]
        offsets = np.zeros(len(serving) + 1, dtype=np.intp)
        offsets[1:] = np.cumsum(lengths, dtype=np.intp)
        object.__setattr__(self, "offsets", _frozen(offsets, np.intp))
        object.__setattr__(self, "var_antenna", _frozen([k for r in serving for k in r], np.intp))
        object.__setattr__(self, "var_user", _frozen(np.repeat(np.arange(len(serving)), lengths), np.intp))

    @classmethod
    def from_serving_sets(cls, num_antennas: int, serving_sets: Iterable[Iterable[int]]) -> "AccessMap":
        sets = tuple(tuple(r) for r in serving_sets)
        return cls(num_antennas=num_antennas, num_users=len(sets), serving_sets=sets)

    @property
    def num_variables(self) -> int:
        return int(self.offsets[-1])

    @cached_property
    def served_counts(self) -> np.ndarray:
        """|U(k)| for every antenna."""
        return _frozen([len(u) for u in self.served_sets], np.intp)

    @cached_property
    def _index(self) -> Dict[Tuple[int, int], int]:
        return {
            (int(k), int(n)): i
            for i, (k, n) in enumerate(zip(self.var_antenna, self.var_user))
        }

    def variable_index(self, antenna: int, user: int) -> int:
        """Flat index of p_kn. Raises KeyError when k is not in R(n)."""
        return self._index[(antenna, user)]

    def user_slice(self, user: int) -> slice:
        return slice(int(self.offsets[user]), int(self.offsets[user + 1]))

    def antenna_load(self, values: np.ndarray) -> np.ndarray:
        """E·x: per-antenna sum of a flat vector, accumulated in ascending user order."""
        return np.bincount(self.var_antenna, weights=values, minlength=self.num_antennas)

    def user_sum(self, values: np.ndarray) -> np.ndarray:
        """Per-user sum of a flat vector."""
        return np.bincount(self.var_user, weights=values, minlength=self.num_users)

    def incidence_sums(self) -> Tuple[np.ndarray, np.ndarray]:
        """Row and column sums of E, read off the served sets without building E."""
        rows = np.zeros(self.num_antennas)
        cols = np.zeros(self.num_variables)
        for k, served in enumerate(self.served_sets):
            for n in served:
                i = self._index.get((k, n))
                if i is not None:
                    rows[k] += 1
                    cols[i] += 1
        return rows, cols


# ─── Problem data ─────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """
    Data of the weighted sum-rate program.

    ``gains`` is flat and follows ``access``'s variable layout, so gains exist
    exactly on the served pairs.
    """

    access: AccessMap
    gains: np.ndarray
    weights: np.ndarray
    budgets: np.ndarray
    proximal: np.ndarray

    def __post_init__(self):
        for name in ("gains", "weights", "budgets", "proximal"):
            object.__setattr__(self, name, _frozen(np.atleast_1d(getattr(self, name))))

    @property
    def num_antennas(self) -> int:
        return self.access.num_antennas

    @property
    def num_users(self) -> int:
        return self.access.num_users

    @cached_property
    def proximal_per_variable(self) -> np.ndarray:
        """Diagonal of V: c_n repeated over user n's variables."""
        return _frozen(self.proximal[self.access.var_user])

    @cached_property
    def weights_per_variable(self) -> np.ndarray:
        return _frozen(self.weights[self.access.var_user])

    def gain(self, antenna: int, user: int) -> float:
        return float(self.gains[self.access.variable_index(antenna, user)])

    def scaled(self, factor: float) -> "ProblemInstance":
        """Same instance with every gain multiplied by ``factor``."""
        return replace(self, gains=self.gains * factor)

    def with_gains(self, gains: np.ndarray) -> "ProblemInstance":
        return replace(self, gains=gains)


def build_instance(
    access: AccessMap,
    gains: Union[Sequence[float], np.ndarray],
    weights: Union[float, Sequence[float]] = 1.0,
    budgets: Union[float, Sequence[float]] = 1.0,
    proximal: Union[float, Sequence[float]] = DEFAULT_PROXIMAL,
) -> ProblemInstance:
    """Build an instance, broadcasting scalar weights, budgets and proximal weights."""
    return ProblemInstance(
        access=access,
        gains=np.asarray(gains, dtype=float),
        weights=np.broadcast_to(np.asarray(weights, dtype=float), (access.num_users,)).copy(),
        budgets=np.broadcast_to(np.asarray(budgets, dtype=float), (access.num_antennas,)).copy(),
        proximal=np.broadcast_to(np.asarray(proximal, dtype=float), (access.num_users,)).copy(),
    )


@dataclass(frozen=True)
class Violation:
    """One broken invariant, naming the field and the offending index."""

    kind: str
    field: str
    index: Dict[str, int]
    message: str = ""

    def __str__(self) -> str:
        where = ", ".join(f"{k}={v}" for k, v in self.index.items())
        return f"{self.kind}({where})" + (f": {self.message}" if self.message else "")


def find_violations(inst: ProblemInstance) -> List[Violation]:
    """Collect every invariant violation of ``inst`` (empty list when valid)."""
    access = inst.access
    K, N = access.num_antennas, access.num_users
    found: List[Violation] = []

    if len(access.serving_sets) != N:
        found.append(Violation("ShapeMismatch", "serving_sets", {"len": len(access.serving_sets)},
                               f"expected {N} serving sets"))
    if len(access.served_sets) != K:
        found.append(Violation("ShapeMismatch", "served_sets", {"len": len(access.served_sets)},
                               f"expected {K} served sets"))

    for n, r in enumerate(access.serving_sets):
        if not r:
            found.append(Violation("EmptyServingSet", "serving_sets", {"n": n}))
        if len(set(r)) != len(r):
            found.append(Violation("DuplicateServingAntenna", "serving_sets", {"n": n}))
        for k in r:
            if not 0 <= k < K:
                found.append(Violation("IndexOutOfRange", "serving_sets", {"k": k, "n": n}))
    for k, u in enumerate(access.served_sets):
        for n in u:
            if not 0 <= n < N:
                found.append(Violation("IndexOutOfRange", "served_sets", {"k": k, "n": n}))

    forward = {(k, n) for n, r in enumerate(access.serving_sets) for k in r}
    backward = {(k, n) for k, u in enumerate(access.served_sets) for n in u}
    for k, n in sorted(forward ^ backward):
        side = "R(n) only" if (k, n) in forward else "U(k) only"
        found.append(Violation("InconsistentAccessMap", "served_sets", {"k": k, "n": n}, side))

    expected = {
        "gains": access.num_variables,
        "weights": N,
        "budgets": K,
        "proximal": N,
    }
    shapes_ok = True
    for name, size in expected.items():
        actual = getattr(inst, name).shape
        if actual != (size,):
            shapes_ok = False
            found.append(Violation("ShapeMismatch", name, {"len": int(np.prod(actual))},
                                   f"expected {size} entries"))
    if not shapes_ok:
        return found

    for i in np.flatnonzero(~(inst.gains > 0)):
        found.append(Violation("NonPositiveGain", "gains",
                               {"k": int(access.var_antenna[i]), "n": int(access.var_user[i])}))
    for n in np.flatnonzero(~(inst.weights > 0)):
        found.append(Violation("NonPositiveWeight", "weights", {"n": int(n)}))
    for k in np.flatnonzero(~(inst.budgets > 0)):
        found.append(Violation("NonPositiveBudget", "budgets", {"k": int(k)}))
    for n in np.flatnonzero(~(inst.proximal > 0)):
        found.append(Violation("NonPositiveProximal", "proximal_params", {"n": int(n)}))
    return found


def validate_instance(inst: ProblemInstance) -> ProblemInstance:
    """Return ``inst`` unchanged when every invariant holds, else raise with all violations."""
    found = find_violations(inst)
    if found:
        raise InvalidInstanceError(found)
    return inst


# ─── Step sizes ───────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class StepSizes:
    """Dual steps alpha_k (0 marks an idle antenna) and auxiliary step beta."""

    alpha: np.ndarray
    beta: float = DEFAULT_BETA
    policy: str = "manual"

    def __post_init__(self):
        object.__setattr__(self, "alpha", _frozen(np.atleast_1d(self.alpha)))
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if np.any(~(self.alpha >= 0)):
            raise ValueError("alpha must be nonnegative")


def _round_down(value: Fraction) -> float:
    """Largest double not above ``value``."""
    f = float(value)
    if Fraction(f) > value:
        f = math.nextafter(f, 0.0)
    return f


def compute_theorem1_step_sizes(inst: ProblemInstance, beta: float = DEFAULT_BETA) -> StepSizes:
    """
    alpha_k = 2·min_{n∈U(k)} c_n / (3|U(k)|); idle antennas get 0.

    Each value is rounded toward zero so the convergence bound holds in exact
    arithmetic, not just up to rounding. When the nearest double lies above the
    bound the value drops one ulp: c = 3 with |U(k)| = 10 gives
    ``nextafter(0.2, 0)``, not ``0.2``.
    """
    alpha = []
    for served in inst.access.served_sets:
        if not served:
            alpha.append(0.0)
            continue
        c_min = min(Fraction(float(inst.proximal[n])) for n in served)
        alpha.append(_round_down(2 * c_min / (3 * len(served))))
    return StepSizes(alpha=np.array(alpha), beta=beta, policy="theorem1")


def compute_lin2006_step_sizes(inst: ProblemInstance, beta: float = DEFAULT_BETA) -> StepSizes:
    """Uniform alpha = min_n c_n / (2·max_k |U(k)|), the older sufficient bound."""
    max_served = int(inst.access.served_counts.max()) if inst.num_antennas else 0
    if max_served == 0:
        raise ValueError("no antenna serves any user")
    c_min = min(Fraction(float(c)) for c in inst.proximal)
    value = _round_down(c_min / (2 * max_served))
    return StepSizes(alpha=np.full(inst.num_antennas, value), beta=beta, policy="lin2006")


def manual_step_sizes(
    inst: ProblemInstance,
    alpha: Union[float, Sequence[float]],
    beta: float = DEFAULT_BETA,
) -> StepSizes:
    """User-chosen steps, no convergence guarantee. Idle antennas are forced to 0."""
    values = np.broadcast_to(np.asarray(alpha, dtype=float), (inst.num_antennas,)).copy()
    values[inst.access.served_counts == 0] = 0.0
    return StepSizes(alpha=values, beta=beta, policy="manual")


def step_size_psd_margin(inst: ProblemInstance, steps: StepSizes) -> List[Optional[Fraction]]:
    """
    Exact diagonal of C = A⁻¹ − (3/2)·E V⁻¹ Eᵀ.

    E V⁻¹ Eᵀ is diagonal because every variable belongs to one antenna, so C is
    positive semidefinite iff every entry is ≥ 0. Idle antennas give ``None``.
    """
    margins: List[Optional[Fraction]] = []
    for k, served in enumerate(inst.access.served_sets):
        a = Fraction(float(steps.alpha[k]))
        if not served or a == 0:
            margins.append(None)
            continue
        load = sum(1 / Fraction(float(inst.proximal[n])) for n in served)
        margins.append(1 / a - Fraction(3, 2) * load)
    return margins


# ─── Rates ────────────────────────────────────────────────────────────────────

def user_signal(inst: ProblemInstance, p: np.ndarray) -> np.ndarray:
    """s_n = Σ_{k∈R(n)} p_kn·γ_kn for every user."""
    return inst.access.user_sum(p * inst.gains)


def weighted_sum_rate(inst: ProblemInstance, p: np.ndarray) -> float:
    """Σ_n w_n·log2(1 + s_n), the conservative objective."""
    return float(np.dot(inst.weights, np.log1p(user_signal(inst, p)) / LN2))


def weighted_sum_rate_gradient(inst: ProblemInstance, p: np.ndarray) -> np.ndarray:
    s = user_signal(inst, p)
    coef = inst.weights / (LN2 * (1.0 + s))
    return coef[inst.access.var_user] * inst.gains


# ─── Iterates ─────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class IterationRecord:
    t: int
    lagrangian_value: float
    dual_gap: Optional[float]
    lambda_step_inf: float
    y_step_inf: float
    messages_exchanged: int = 0
    lyapunov: Optional[float] = None
    # λ(t) and y(t), kept only when the run asks for iterates
    lam: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    y: Optional[np.ndarray] = field(default=None, compare=False, repr=False)


@dataclass
class AlgorithmState:
    """Primal p, auxiliary y and dual lam iterates. Owned by one engine at a time."""

    p: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    t: int = 0
    diagnostics: List[IterationRecord] = field(default_factory=list)

    def copy(self) -> "AlgorithmState":
        return AlgorithmState(self.p.copy(), self.y.copy(), self.lam.copy(), self.t, list(self.diagnostics))

    def check_shapes(self, inst: ProblemInstance):
        m, K = inst.access.num_variables, inst.num_antennas
        if self.p.shape != (m,) or self.y.shape != (m,) or self.lam.shape != (K,):
            raise ValueError(
                f"state shapes p{self.p.shape} y{self.y.shape} lam{self.lam.shape} "
                f"do not match {m} variables / {K} antennas"
            )


@dataclass(frozen=True, eq=False)
class SubproblemSolution:
    """Optimum of one user's subproblem: active set, weighted power sum and powers."""

    user: int
    antennas: Tuple[int, ...]
    omega: Tuple[int, ...]
    s: float
    powers: np.ndarray
    passes: int = 1

    def power(self, antenna: int) -> float:
        return float(self.powers[self.antennas.index(antenna)])


# ─── JSON ─────────────────────────────────────────────────────────────────────

def instance_to_dict(inst: ProblemInstance) -> dict:
    access = inst.access
    return {
        "K": access.num_antennas,
        "N": access.num_users,
        "serving_sets": [list(r) for r in access.serving_sets],
        "gains": [
            [int(k), int(n), float(g)]
            for k, n, g in zip(access.var_antenna, access.var_user, inst.gains)
        ],
        "weights": inst.weights.tolist(),
        "budgets": inst.budgets.tolist(),
        "proximal_params": inst.proximal.tolist(),
    }


def instance_from_dict(data: dict) -> ProblemInstance:
    """Parse and validate an instance document; gains arrive as (k, n, γ) triplets."""
    missing = [k for k in INSTANCE_FIELDS if k not in data]
    unknown = [k for k in data if k not in INSTANCE_FIELDS]
    if missing or unknown:
        raise InvalidInstanceError(
            [Violation("ShapeMismatch", name, {}, "missing field") for name in missing]
            + [Violation("ShapeMismatch", name, {}, "unknown field") for name in unknown]
        )

    access = AccessMap(
        num_antennas=int(data["K"]),
        num_users=int(data["N"]),
        serving_sets=tuple(tuple(r) for r in data["serving_sets"]),
    )
    gains = np.full(access.num_variables, np.nan)
    problems: List[Violation] = []
    for k, n, g in data["gains"]:
        try:
            gains[access.variable_index(int(k), int(n))] = float(g)
        except KeyError:
            problems.append(Violation("OrphanGain", "gains", {"k": int(k), "n": int(n)}))
    for i in np.flatnonzero(np.isnan(gains)):
        problems.append(Violation("MissingGain", "gains",
                                  {"k": int(access.var_antenna[i]), "n": int(access.var_user[i])}))
    if problems:
        raise InvalidInstanceError(problems)

    inst = ProblemInstance(
        access=access,
        gains=gains,
        weights=np.asarray(data["weights"], dtype=float),
        budgets=np.asarray(data["budgets"], dtype=float),
        proximal=np.asarray(data["proximal_params"], dtype=float),
    )
    return validate_instance(inst)


def save_instance(inst: ProblemInstance, path: Union[str, Path]):
    Path(path).write_text(json.dumps(instance_to_dict(inst), indent=2))


def load_instance(path: Union[str, Path]) -> ProblemInstance:
    return instance_from_dict(json.loads(Path(path).read_text()))
