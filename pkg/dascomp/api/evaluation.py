"""
Rates, throughput reports and convergence diagnostics.

Power vectors use the flat (antenna, user) layout of an AccessMap. Rates come
in bit/s/Hz; reports also carry bit/s at the receiver bandwidth.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from scipy import stats

from dascomp.api._utils import write_csv, write_json
from dascomp.api.scenario import DEFAULT_BANDWIDTH_HZ, ChannelScenario
from dascomp.core.model import LN2, AccessMap, IterationRecord, ProblemInstance, user_signal

CONFIDENCE = 0.95


# ─── Rates ────────────────────────────────────────────────────────────────────

def conservative_rates(p: np.ndarray, inst: ProblemInstance) -> np.ndarray:
    """log2(1 + Σ_{k∈R(n)} p_kn·γ_kn) per user."""
    return np.log1p(user_signal(inst, p)) / LN2


def conservative_rate(p: np.ndarray, inst: ProblemInstance, n: int) -> float:
    return float(conservative_rates(p, inst)[n])


def power_matrix(p: np.ndarray, access: AccessMap) -> np.ndarray:
    """Flat powers spread into a dense (K, N) matrix, zero off the serving pairs."""
    out = np.zeros((access.num_antennas, access.num_users))
    out[access.var_antenna, access.var_user] = p
    return out


def received_interference(p: np.ndarray, scenario: ChannelScenario, access: Optional[AccessMap] = None) -> np.ndarray:
    """I_n = Σ_{(k,m)∈I(n)} |h_kn|²·p_km, the co-channel power at each user."""
    access = access if access is not None else scenario.access
    powers = power_matrix(p, access)
    out = np.zeros(access.num_users)
    for n in range(access.num_users):
        mates = list(scenario.schedule.partners(n))
        if mates:
            # powers is zero off the serving pairs, so this sums over R(m) of ``access``
            out[n] = float(scenario.raw_gain[:, n] @ powers[:, mates].sum(axis=1))
    return out


def true_rates(
    p: np.ndarray,
    scenario: ChannelScenario,
    access: Optional[AccessMap] = None,
    interference: bool = True,
) -> np.ndarray:
    """log2(1 + S/(σ² + I)) per user; ``interference=False`` drops I."""
    access = access if access is not None else scenario.access
    signal = np.bincount(
        access.var_user,
        weights=scenario.raw_gain[access.var_antenna, access.var_user] * p,
        minlength=access.num_users,
    )
    denom = scenario.noise_power
    if interference:
        denom = denom + received_interference(p, scenario, access)
    return np.log1p(signal / denom) / LN2


def true_rate(p: np.ndarray, scenario: ChannelScenario, n: int, access: Optional[AccessMap] = None) -> float:
    return float(true_rates(p, scenario, access)[n])


def margin_holds(p: np.ndarray, scenario: ChannelScenario, access: Optional[AccessMap] = None) -> np.ndarray:
    """Per user: does σ² + I stay within σ²_peak, so the conservative rate is a lower bound?"""
    return scenario.noise_power + received_interference(p, scenario, access) <= scenario.sigma_peak


# ─── Reports ──────────────────────────────────────────────────────────────────

REPORT_COLUMNS = ("seed", "strategy", "user", "rate_conservative", "rate_true",
                  "se_conservative", "se_true", "margin_holds")


@dataclass
class ThroughputReport:
    seed: int
    strategy: str
    per_user_true_se: np.ndarray
    per_user_conservative_se: np.ndarray
    weights: np.ndarray
    margin_ok: np.ndarray
    bandwidth_hz: float = DEFAULT_BANDWIDTH_HZ

    @property
    def per_user_true_rate(self) -> np.ndarray:
        """bit/s"""
        return self.per_user_true_se * self.bandwidth_hz

    @property
    def per_user_conservative_rate(self) -> np.ndarray:
        return self.per_user_conservative_se * self.bandwidth_hz

    @property
    def weighted_sum(self) -> float:
        """Weighted true rate, bit/s/Hz."""
        return float(np.dot(self.weights, self.per_user_true_se))

    @property
    def mean_user_throughput(self) -> float:
        """Mean true per-user rate, bit/s."""
        if len(self.per_user_true_se) == 0:
            return 0.0
        return float(self.per_user_true_rate.mean())

    def margin_violation_rate(self) -> float:
        if len(self.margin_ok) == 0:
            return 0.0
        return float(1.0 - self.margin_ok.mean())

    def rows(self) -> List[dict]:
        return [
            {
                "seed": self.seed,
                "strategy": self.strategy,
                "user": n,
                "rate_conservative": float(self.per_user_conservative_rate[n]),
                "rate_true": float(self.per_user_true_rate[n]),
                "se_conservative": float(self.per_user_conservative_se[n]),
                "se_true": float(self.per_user_true_se[n]),
                "margin_holds": int(bool(self.margin_ok[n])),
            }
            for n in range(len(self.per_user_true_se))
        ]


def throughput_report(
    p: np.ndarray,
    inst: ProblemInstance,
    scenario: ChannelScenario,
    strategy: str,
    seed: int,
    bandwidth_hz: Optional[float] = None,
) -> ThroughputReport:
    access = inst.access
    return ThroughputReport(
        seed=seed,
        strategy=strategy,
        per_user_true_se=true_rates(p, scenario, access),
        per_user_conservative_se=conservative_rates(p, inst),
        weights=np.asarray(inst.weights, dtype=float),
        margin_ok=margin_holds(p, scenario, access),
        bandwidth_hz=bandwidth_hz if bandwidth_hz is not None else scenario.bandwidth_hz,
    )


def write_reports_csv(path: Union[str, Path], reports: Iterable[ThroughputReport]) -> Path:
    rows = [row for report in reports for row in report.rows()]
    return write_csv(path, REPORT_COLUMNS, rows)


def _half_width(values: np.ndarray) -> Optional[float]:
    if len(values) < 2:
        return None
    sem = stats.sem(values)
    return float(stats.t.ppf(0.5 + CONFIDENCE / 2.0, len(values) - 1) * sem)


def aggregate_reports(reports: Sequence[ThroughputReport]) -> Dict[str, dict]:
    """
    Per strategy: mean per-user throughput averaged over realizations, with a
    Student-t half-width over the per-realization means.
    """
    by_strategy: Dict[str, List[ThroughputReport]] = {}
    for report in reports:
        by_strategy.setdefault(report.strategy, []).append(report)

    out = {}
    for strategy, group in sorted(by_strategy.items()):
        means = np.array([r.mean_user_throughput for r in group])
        out[strategy] = {
            "realizations": len(group),
            "mean_user_throughput_bps": float(means.mean()),
            "half_width_bps": _half_width(means),
            "mean_weighted_sum_bps_hz": float(np.mean([r.weighted_sum for r in group])),
            "margin_violation_rate": float(np.mean([r.margin_violation_rate() for r in group])),
        }
    return out


def paired_difference(reports: Sequence[ThroughputReport], first: str, second: str) -> dict:
    """Mean and half-width of (first − second) per-user throughput, paired by seed."""
    a = {r.seed: r.mean_user_throughput for r in reports if r.strategy == first}
    b = {r.seed: r.mean_user_throughput for r in reports if r.strategy == second}
    seeds = sorted(set(a) & set(b))
    diff = np.array([a[s] - b[s] for s in seeds])
    mean = float(diff.mean()) if len(diff) else None
    half = _half_width(diff)
    return {
        "pairs": len(seeds),
        "mean_bps": mean,
        "half_width_bps": half,
        "positive_at_confidence": half is not None and mean - half > 0,
    }


def write_aggregate_json(path: Union[str, Path], reports: Sequence[ThroughputReport]) -> Path:
    payload = {"confidence": CONFIDENCE, "strategies": aggregate_reports(reports)}
    strategies = {r.strategy for r in reports}
    if {"proposed", "epa"} <= strategies:
        payload["proposed_minus_epa"] = paired_difference(reports, "proposed", "epa")
    return write_json(path, payload)


# ─── Convergence ──────────────────────────────────────────────────────────────

TRACE_COLUMNS = ("t", "lagrangian", "dual_gap", "lambda_step_inf", "y_step_inf",
                 "messages_exchanged", "lyapunov")


def dual_gap_trace(trace: Sequence[IterationRecord], reference_value: float) -> np.ndarray:
    """L(p(t), λ(t), y(t)) − f(y*) for every recorded iteration."""
    return np.array([record.lagrangian_value - reference_value for record in trace])


def iterations_to_gap(gaps: Sequence[float], threshold: float) -> Optional[int]:
    """
    First iteration count after which |gap| stays within ``threshold`` for the
    rest of the trace, or ``None`` if the last value is still outside.
    """
    gaps = np.abs(np.asarray(gaps, dtype=float))
    outside = np.flatnonzero(~(gaps <= threshold))
    if len(outside) == 0:
        return 0
    last = int(outside[-1])
    if last == len(gaps) - 1:
        return None
    return last + 1


def write_trace_csv(path: Union[str, Path], trace: Sequence[IterationRecord]) -> Path:
    rows = (
        {
            "t": r.t,
            "lagrangian": r.lagrangian_value,
            "dual_gap": r.dual_gap,
            "lambda_step_inf": r.lambda_step_inf,
            "y_step_inf": r.y_step_inf,
            "messages_exchanged": r.messages_exchanged,
            "lyapunov": r.lyapunov,
        }
        for r in trace
    )
    return write_csv(path, TRACE_COLUMNS, rows)
