"""
Simulation world: hexagonal DAS layout, channel draws, antenna selection and
co-channel scheduling.

Each cell is one base station with a center antenna and six remote antennas at
distance D, so all antennas sit on a triangular lattice of spacing D. Users are
dropped uniformly over the union of the antennas' hexagonal coverage areas.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from dascomp.api._utils import db_to_linear, dbm_to_watt, linear_to_db, write_csv, write_json
from dascomp.core.model import DEFAULT_PROXIMAL, AccessMap, ProblemInstance, build_instance
from dascomp.exceptions import DistanceTooSmallError

logger = logging.getLogger(__name__)

ANTENNAS_PER_CELL = 7
DEFAULT_SPACING_M = 1000.0
MIN_USER_DISTANCE_M = 10.0
MIN_PATH_LOSS_DISTANCE_M = 1.0

PATH_LOSS_INTERCEPT_DB = 34.5
PATH_LOSS_SLOPE_DB = 35.0
SHADOWING_STD_DB = 8.0

NOISE_DENSITY_DBM_HZ = -174.0
DEFAULT_BANDWIDTH_HZ = 1e6
NOISE_FIGURE_DB = 5.0
PEAK_MARGIN_DB = 5.0

# Unit lattice directions (multiples of D)
_E1 = np.array([1.0, 0.0])
_E2 = np.array([0.5, math.sqrt(3.0) / 2.0])


def _rotations(vec: np.ndarray) -> np.ndarray:
    angles = np.arange(6) * (math.pi / 3.0)
    cos, sin = np.cos(angles), np.sin(angles)
    return np.stack([cos * vec[0] - sin * vec[1], sin * vec[0] + cos * vec[1]], axis=1)


# ─── Topology ─────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class Topology:
    antenna_positions: np.ndarray
    user_positions: np.ndarray
    bs_of_antenna: Tuple[int, ...]
    spacing: float
    cell_centers: np.ndarray

    @property
    def num_antennas(self) -> int:
        return len(self.antenna_positions)

    @property
    def num_users(self) -> int:
        return len(self.user_positions)

    @property
    def num_cells(self) -> int:
        return len(self.cell_centers)

    def distances(self) -> np.ndarray:
        """Antenna-to-user distances, shape (K, N)."""
        diff = self.antenna_positions[:, None, :] - self.user_positions[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])

    def min_user_distance(self) -> float:
        if self.num_users == 0:
            return math.inf
        return float(self.distances().min())


def cell_centers(cells: int, spacing: float) -> np.ndarray:
    """
    Centers of the first ``cells`` 7-antenna clusters, nearest to the origin first.

    Clusters tile the antenna lattice, so their centers form the sublattice
    spanned by 2e1+e2 and its 60° rotation.
    """
    u = 2.0 * _E1 + _E2
    v = -_E1 + 3.0 * _E2
    reach = int(math.ceil(math.sqrt(cells))) + 2
    points = []
    for i in range(-reach, reach + 1):
        for j in range(-reach, reach + 1):
            pt = i * u + j * v
            points.append((round(float(np.hypot(*pt)), 9), round(math.atan2(pt[1], pt[0]) % (2 * math.pi), 9), pt))
    points.sort(key=lambda item: (item[0], item[1]))
    return np.array([pt for _, _, pt in points[:cells]]).reshape(-1, 2) * spacing


def _in_hexagon(offsets: np.ndarray, spacing: float) -> np.ndarray:
    """Whether each offset lies in the hexagon of inradius D/2 around a lattice point."""
    half = spacing / 2.0
    inside = np.ones(len(offsets), dtype=bool)
    for angle in (0.0, math.pi / 3.0, 2.0 * math.pi / 3.0):
        proj = offsets[:, 0] * math.cos(angle) + offsets[:, 1] * math.sin(angle)
        inside &= np.abs(proj) <= half
    return inside


def _drop_users(rng: np.random.Generator, antennas: np.ndarray, count: int, spacing: float) -> np.ndarray:
    placed: List[np.ndarray] = []
    needed = count
    circumradius = spacing / math.sqrt(3.0)
    while needed > 0:
        batch = max(2 * needed, 16)
        anchors = antennas[rng.integers(0, len(antennas), size=batch)]
        offsets = np.column_stack([
            rng.uniform(-circumradius, circumradius, size=batch),
            rng.uniform(-spacing / 2.0, spacing / 2.0, size=batch),
        ])
        keep = _in_hexagon(offsets, spacing)
        candidates = anchors[keep] + offsets[keep]
        if len(candidates):
            diff = candidates[:, None, :] - antennas[None, :, :]
            nearest = np.hypot(diff[..., 0], diff[..., 1]).min(axis=1)
            candidates = candidates[nearest >= MIN_USER_DISTANCE_M]
        take = candidates[:needed]
        placed.append(take)
        needed -= len(take)
    return np.concatenate(placed) if placed else np.zeros((0, 2))


def generate_topology(
    cells: int,
    spacing: float = DEFAULT_SPACING_M,
    users_per_cell: int = 10,
    seed: Union[int, np.random.SeedSequence, None] = 0,
) -> Topology:
    """
    Build ``cells`` clusters of 7 antennas and drop ``users_per_cell·cells`` users.

    Every user ends up at least 10 m from every antenna.
    """
    if cells < 1:
        raise ValueError(f"cells must be at least 1, got {cells}")
    if not spacing > 0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    if users_per_cell < 0:
        raise ValueError(f"users_per_cell must be nonnegative, got {users_per_cell}")

    centers = cell_centers(cells, spacing)
    ring = _rotations(_E1) * spacing
    antennas, owners = [], []
    for bs, center in enumerate(centers):
        antennas.append(center)
        antennas.extend(center + ring)
        owners.extend([bs] * ANTENNAS_PER_CELL)
    antenna_positions = np.array(antennas)

    rng = np.random.default_rng(seed)
    users = _drop_users(rng, antenna_positions, users_per_cell * cells, spacing)
    logger.debug("topology: %d cells, %d antennas, %d users", cells, len(antenna_positions), len(users))
    return Topology(
        antenna_positions=antenna_positions,
        user_positions=users.reshape(-1, 2),
        bs_of_antenna=tuple(owners),
        spacing=float(spacing),
        cell_centers=centers,
    )


# ─── Channel ──────────────────────────────────────────────────────────────────

def path_loss_db(d: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """PL = 34.5 + 35·log10(d), d in meters, d ≥ 1."""
    arr = np.asarray(d, dtype=float)
    if arr.size and float(arr.min()) < MIN_PATH_LOSS_DISTANCE_M:
        raise DistanceTooSmallError(float(arr.min()))
    loss = PATH_LOSS_INTERCEPT_DB + PATH_LOSS_SLOPE_DB * np.log10(arr)
    return float(loss) if np.ndim(d) == 0 else loss


@dataclass(frozen=True, eq=False)
class ChannelDraw:
    """Raw power gains |h_kn|² and the large-scale part (path loss plus shadowing) in dB, both (K, N)."""

    raw_gain: np.ndarray
    large_scale_db: np.ndarray


def draw_channel(
    topology: Topology,
    seed: Union[int, np.random.SeedSequence, None] = 0,
    shadowing: bool = True,
    fading: bool = True,
) -> ChannelDraw:
    """
    |h_kn|² = 10^(−(PL + X)/10)·F with X ~ N(0, 8 dB) and F ~ Exp(1), i.i.d. per pair.
    """
    rng = np.random.default_rng(seed)
    shape = (topology.num_antennas, topology.num_users)
    loss = path_loss_db(topology.distances()) if topology.num_users else np.zeros(shape)
    shadow = rng.normal(0.0, SHADOWING_STD_DB, size=shape) if shadowing else np.zeros(shape)
    fade = rng.exponential(1.0, size=shape) if fading else np.ones(shape)
    large_scale = loss + shadow
    return ChannelDraw(raw_gain=db_to_linear(-large_scale) * fade, large_scale_db=large_scale)


def noise_power_watt(bandwidth_hz: float = DEFAULT_BANDWIDTH_HZ, noise_figure_db: float = NOISE_FIGURE_DB) -> float:
    """Thermal noise σ² over the receiver bandwidth: −174 dBm/Hz + 10·log10(B) + NF."""
    return dbm_to_watt(NOISE_DENSITY_DBM_HZ + linear_to_db(bandwidth_hz) + noise_figure_db)


# ─── Selection and scheduling ─────────────────────────────────────────────────

@dataclass(frozen=True)
class Schedule:
    channel_of_user: Tuple[int, ...]
    groups: Tuple[Tuple[int, ...], ...]
    interference_sets: Tuple[Tuple[Tuple[int, int], ...], ...]

    @property
    def num_channels(self) -> int:
        return len(self.groups)

    def partners(self, user: int) -> Tuple[int, ...]:
        return tuple(m for m in self.groups[self.channel_of_user[user]] if m != user)


def select_serving_antennas(source, per_user_count: int) -> AccessMap:
    """
    R(n) = the ``per_user_count`` antennas with the least large-scale loss; ties go to the lower index.

    ``source`` is a scenario, a channel draw or a (K, N) array of losses in dB.
    """
    large_scale_db = np.asarray(getattr(source, "large_scale_db", source), dtype=float)
    num_antennas, num_users = large_scale_db.shape
    if not 1 <= per_user_count <= num_antennas:
        raise ValueError(f"per_user_count must lie in [1, {num_antennas}], got {per_user_count}")
    order = np.argsort(large_scale_db, axis=0, kind="stable")
    serving = [tuple(sorted(int(k) for k in order[:per_user_count, n])) for n in range(num_users)]
    return AccessMap.from_serving_sets(num_antennas, serving)


def schedule_users(access: AccessMap, seed: Union[int, np.random.SeedSequence, None] = 0) -> Schedule:
    """
    Greedy pairing: visit users in a seeded random order and put each one on
    the first open single-user channel whose user shares no serving antenna
    with it, else on a new channel.
    """
    rng = np.random.default_rng(seed)
    order = rng.permutation(access.num_users)
    serving = [set(r) for r in access.serving_sets]
    groups: List[List[int]] = []
    open_channels: List[int] = []
    for n in (int(v) for v in order):
        for pos, ch in enumerate(open_channels):
            if not serving[groups[ch][0]] & serving[n]:
                groups[ch].append(n)
                del open_channels[pos]
                break
        else:
            groups.append([n])
            open_channels.append(len(groups) - 1)

    channel_of_user = [0] * access.num_users
    for ch, members in enumerate(groups):
        for n in members:
            channel_of_user[n] = ch
    interference = []
    for n in range(access.num_users):
        pairs = [(k, m) for m in groups[channel_of_user[n]] if m != n for k in access.serving_sets[m]]
        interference.append(tuple(sorted(pairs)))
    return Schedule(
        channel_of_user=tuple(channel_of_user),
        groups=tuple(tuple(sorted(g)) for g in groups),
        interference_sets=tuple(interference),
    )


# ─── Scenario ─────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class ChannelScenario:
    topology: Topology
    raw_gain: np.ndarray
    large_scale_db: np.ndarray
    noise_power: float
    sigma_peak: np.ndarray
    access: AccessMap
    schedule: Schedule
    seed: Optional[int] = None
    bandwidth_hz: float = DEFAULT_BANDWIDTH_HZ
    margin_db: float = PEAK_MARGIN_DB

    @property
    def interference_sets(self) -> Tuple[Tuple[Tuple[int, int], ...], ...]:
        return self.schedule.interference_sets

    @property
    def num_users(self) -> int:
        return self.topology.num_users


def build_problem_instance(
    scenario: ChannelScenario,
    access: Optional[AccessMap] = None,
    weights: Union[float, Sequence[float]] = 1.0,
    budgets: Union[float, Sequence[float]] = 1.0,
    c: Union[float, Sequence[float]] = DEFAULT_PROXIMAL,
    noise_only: bool = False,
) -> ProblemInstance:
    """
    γ_kn = |h_kn|²/σ²_peak,n on the serving pairs. ``noise_only`` divides by
    the plain noise power instead, which is what the no-interference bound uses.
    """
    access = access if access is not None else scenario.access
    floor = np.full(access.num_users, scenario.noise_power) if noise_only else scenario.sigma_peak
    if not np.all(floor > 0):
        raise ValueError("noise normalization must be positive")
    gains = scenario.raw_gain[access.var_antenna, access.var_user] / floor[access.var_user]
    return build_instance(access, gains, weights=weights, budgets=budgets, proximal=c)


def generate_scenario(
    cells: int = 7,
    spacing: float = DEFAULT_SPACING_M,
    users_per_cell: int = 10,
    per_user_count: int = 3,
    seed: int = 0,
    margin_db: float = PEAK_MARGIN_DB,
    bandwidth_hz: float = DEFAULT_BANDWIDTH_HZ,
    shadowing: bool = True,
    fading: bool = True,
) -> ChannelScenario:
    """One realization: topology, channel, serving sets and schedule, each from its own child seed."""
    topo_seed, channel_seed, schedule_seed = np.random.SeedSequence(seed).spawn(3)
    topology = generate_topology(cells, spacing, users_per_cell, topo_seed)
    channel = draw_channel(topology, channel_seed, shadowing=shadowing, fading=fading)
    access = select_serving_antennas(channel.large_scale_db, per_user_count)
    schedule = schedule_users(access, schedule_seed)
    noise = noise_power_watt(bandwidth_hz)
    sigma_peak = np.full(topology.num_users, noise * db_to_linear(margin_db))
    logger.debug("scenario seed=%s: %d users on %d channels", seed, topology.num_users, schedule.num_channels)
    return ChannelScenario(
        topology=topology,
        raw_gain=channel.raw_gain,
        large_scale_db=channel.large_scale_db,
        noise_power=noise,
        sigma_peak=sigma_peak,
        access=access,
        schedule=schedule,
        seed=seed,
        bandwidth_hz=bandwidth_hz,
        margin_db=margin_db,
    )


def scenario_to_dict(scenario: ChannelScenario) -> dict:
    topo = scenario.topology
    return {
        "seed": scenario.seed,
        "spacing": topo.spacing,
        "bandwidth_hz": scenario.bandwidth_hz,
        "margin_db": scenario.margin_db,
        "antenna_positions": topo.antenna_positions.tolist(),
        "user_positions": topo.user_positions.tolist(),
        "bs_of_antenna": list(topo.bs_of_antenna),
        "noise_power": scenario.noise_power,
        "sigma_peak": scenario.sigma_peak.tolist(),
        "serving_sets": [list(r) for r in scenario.access.serving_sets],
        "gains": [
            [k, n, float(scenario.raw_gain[k, n])]
            for k in range(topo.num_antennas)
            for n in range(topo.num_users)
        ],
        "schedule": {
            "channel_of_user": list(scenario.schedule.channel_of_user),
            "groups": [list(g) for g in scenario.schedule.groups],
        },
    }


def save_scenario(scenario: ChannelScenario, path: Union[str, Path]) -> Path:
    return write_json(path, scenario_to_dict(scenario))


GAIN_COLUMNS = ("antenna", "user", "gain_linear")


def export_gains_csv(scenario: ChannelScenario, path: Union[str, Path]) -> Path:
    num_antennas, num_users = scenario.raw_gain.shape
    rows = (
        {"antenna": k, "user": n, "gain_linear": float(scenario.raw_gain[k, n])}
        for k in range(num_antennas)
        for n in range(num_users)
    )
    return write_csv(path, GAIN_COLUMNS, rows)
