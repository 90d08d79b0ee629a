"""
Base-station message passing for the proximal dual iteration.

Each base station (BS) hosts some users and owns some antennas. A round is:

    1. hosts solve their users' subproblems at (λ(t), y(t)) and send one
       PowerReport per serving antenna to that antenna's owner;
    2. owners sum the reports in ascending user order, apply the projected
       dual step and send one DualReport per antenna to every host that
       reported on it;
    3. hosts re-solve with λ(t+1) and move their auxiliaries locally.

Messages between two antennas of the same BS are delivered like any other
but are not counted as backhaul traffic.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from dascomp.core.engine import RunConfig, RunResult, initial_state, iteration_record
from dascomp.core.local_solver import SubproblemInput, solve_subproblem
from dascomp.core.model import AlgorithmState, IterationRecord, ProblemInstance
from dascomp.exceptions import NotConvergedError, ProtocolError

logger = logging.getLogger(__name__)

POWER_REPORT = "power"
DUAL_REPORT = "dual"


@dataclass(frozen=True)
class NodeTopology:
    """Which BS owns each antenna and which BS hosts each user."""

    bs_of_antenna: Tuple[int, ...]
    host_bs_of_user: Tuple[int, ...]

    @property
    def base_stations(self) -> Tuple[int, ...]:
        return tuple(sorted(set(self.bs_of_antenna) | set(self.host_bs_of_user)))

    def routes(self, inst: ProblemInstance) -> List[Tuple[int, int]]:
        """Backhaul links the protocol uses, as (host, owner) pairs."""
        links = set()
        for n, antennas in enumerate(inst.access.serving_sets):
            host = self.host_bs_of_user[n]
            for k in antennas:
                owner = self.bs_of_antenna[k]
                if owner != host:
                    links.add((min(host, owner), max(host, owner)))
        return sorted(links)

    def check(self, inst: ProblemInstance):
        if len(self.bs_of_antenna) != inst.num_antennas:
            raise ProtocolError(
                f"bs_of_antenna covers {len(self.bs_of_antenna)} antennas, instance has {inst.num_antennas}"
            )
        if len(self.host_bs_of_user) != inst.num_users:
            raise ProtocolError(
                f"host_bs_of_user covers {len(self.host_bs_of_user)} users, instance has {inst.num_users}"
            )
        for n, antennas in enumerate(inst.access.serving_sets):
            owners = {self.bs_of_antenna[k] for k in antennas}
            if self.host_bs_of_user[n] not in owners:
                raise ProtocolError(f"user {n} is hosted by BS {self.host_bs_of_user[n]}, "
                                    f"which owns none of its serving antennas")


def assign_hosts(inst: ProblemInstance, bs_of_antenna: Sequence[int]) -> NodeTopology:
    """Host each user at the owner of its strongest serving antenna; ties go to the lower BS id."""
    bs_of_antenna = tuple(int(b) for b in bs_of_antenna)
    hosts = []
    for n, antennas in enumerate(inst.access.serving_sets):
        if not antennas:
            raise ProtocolError(f"user {n} has no serving antenna to be hosted by")
        best = min(antennas, key=lambda k: (-inst.gain(k, n), bs_of_antenna[k]))
        hosts.append(bs_of_antenna[best])
    return NodeTopology(bs_of_antenna=bs_of_antenna, host_bs_of_user=tuple(hosts))


# ─── Messages ─────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Message:
    kind: str
    round: int
    from_bs: int
    to_bs: int
    antenna: int
    value: float
    user: Optional[int] = None

    @property
    def is_local(self) -> bool:
        return self.from_bs == self.to_bs


LEDGER_COLUMNS = ("round", "kind", "from_bs", "to_bs", "user", "antenna", "value")


class MessageLedger:
    """Every message sent, in send order."""

    def __init__(self):
        self.messages: List[Message] = []
        self._backhaul: Dict[int, int] = defaultdict(int)
        self._local: Dict[int, int] = defaultdict(int)

    def record(self, msg: Message):
        self.messages.append(msg)
        if msg.is_local:
            self._local[msg.round] += 1
        else:
            self._backhaul[msg.round] += 1

    def backhaul_count(self, round: Optional[int] = None) -> int:
        if round is None:
            return sum(self._backhaul.values())
        return self._backhaul.get(round, 0)

    def local_count(self, round: Optional[int] = None) -> int:
        if round is None:
            return sum(self._local.values())
        return self._local.get(round, 0)

    @property
    def rounds(self) -> int:
        return max((m.round for m in self.messages), default=-1) + 1

    def per_round_backhaul(self) -> List[int]:
        return [self.backhaul_count(t) for t in range(self.rounds)]

    def rows(self) -> List[dict]:
        return [
            {
                "round": m.round,
                "kind": m.kind,
                "from_bs": m.from_bs,
                "to_bs": m.to_bs,
                "user": "" if m.user is None else m.user,
                "antenna": m.antenna,
                "value": m.value,
            }
            for m in self.messages
        ]

    def summary(self) -> dict:
        per_round = self.per_round_backhaul()
        return {
            "rounds": len(per_round),
            "total_messages": len(self.messages),
            "backhaul_messages": sum(per_round),
            "local_messages": self.local_count(),
            "max_backhaul_per_round": max(per_round, default=0),
            "backhaul_per_round": per_round,
        }


class _Backhaul:
    """Round-scoped mailboxes. Anything left undelivered at a barrier is an error."""

    def __init__(self, ledger: MessageLedger):
        self.ledger = ledger
        self._inbox: Dict[int, List[Message]] = defaultdict(list)

    def send(self, msg: Message):
        self.ledger.record(msg)
        self._inbox[msg.to_bs].append(msg)

    def deliver(self, bs: int) -> List[Message]:
        return self._inbox.pop(bs, [])

    def barrier(self, round: int):
        left = sum(len(v) for v in self._inbox.values())
        if left:
            raise ProtocolError(f"{left} message(s) undelivered at the end of a phase in round {round}")


# ─── Nodes ────────────────────────────────────────────────────────────────────

@dataclass
class _HostedUser:
    antennas: Tuple[int, ...]
    owners: Tuple[int, ...]
    gammas: np.ndarray
    weight: float
    proximal: float
    y: np.ndarray
    duals: Dict[int, float]
    p: np.ndarray = field(default=None)
    y_step: float = 0.0

    def input(self, user: int) -> SubproblemInput:
        return SubproblemInput(
            user=user,
            antennas=self.antennas,
            gammas=self.gammas,
            weight=self.weight,
            proximal=self.proximal,
            duals=np.array([self.duals[k] for k in self.antennas]),
            auxiliaries=self.y,
        )


@dataclass
class _OwnedAntenna:
    budget: float
    alpha: float
    lam: float
    served: Tuple[int, ...]
    lam_step: float = 0.0


class BaseStationNode:
    """One BS: the users it hosts and the antennas it owns, nothing else."""

    def __init__(self, bs_id: int):
        self.bs_id = bs_id
        self.users: Dict[int, _HostedUser] = {}
        self.antennas: Dict[int, _OwnedAntenna] = {}

    def solve_powers(self, round: int) -> List[Message]:
        out = []
        for n in sorted(self.users):
            u = self.users[n]
            u.p = solve_subproblem(u.input(n)).powers
            for k, owner, value in zip(u.antennas, u.owners, u.p):
                out.append(Message(POWER_REPORT, round, self.bs_id, owner, k, float(value), user=n))
        return out

    def update_duals(self, inbox: List[Message], round: int) -> List[Message]:
        reports: Dict[int, Dict[int, Message]] = defaultdict(dict)
        for msg in inbox:
            if msg.kind != POWER_REPORT or msg.round != round or msg.antenna not in self.antennas:
                raise ProtocolError(f"BS {self.bs_id} cannot consume {msg}")
            if msg.user in reports[msg.antenna]:
                raise ProtocolError(f"duplicate power report for antenna {msg.antenna}, user {msg.user}")
            reports[msg.antenna][msg.user] = msg

        out = []
        for k in sorted(self.antennas):
            a = self.antennas[k]
            got = reports.get(k, {})
            if tuple(sorted(got)) != a.served:
                raise ProtocolError(f"antenna {k} expected reports from users {a.served}, got {tuple(sorted(got))}")
            if not a.served:
                a.lam_step = 0.0
                continue
            total = 0.0
            for n in a.served:
                total += got[n].value
            lam_next = max(a.lam + a.alpha * (total - a.budget), 0.0)
            a.lam_step = abs(lam_next - a.lam)
            a.lam = lam_next
            for host in sorted({m.from_bs for m in got.values()}):
                out.append(Message(DUAL_REPORT, round, self.bs_id, host, k, lam_next))
        return out

    def update_auxiliaries(self, inbox: List[Message], round: int, beta: float):
        for msg in inbox:
            if msg.kind != DUAL_REPORT or msg.round != round:
                raise ProtocolError(f"BS {self.bs_id} cannot consume {msg}")
            for u in self.users.values():
                if msg.antenna in u.duals:
                    u.duals[msg.antenna] = msg.value
        for n in sorted(self.users):
            u = self.users[n]
            z = solve_subproblem(u.input(n)).powers
            y_next = u.y + beta * (z - u.y)
            u.y_step = float(np.max(np.abs(y_next - u.y), initial=0.0))
            u.y = y_next

    def known_keys(self) -> dict:
        """What this node holds, for locality audits."""
        return {
            "users": sorted(self.users),
            "antennas": sorted(self.antennas),
            "duals": {n: sorted(u.duals) for n, u in self.users.items()},
        }


def _build_nodes(
    inst: ProblemInstance,
    topo: NodeTopology,
    config: RunConfig,
    start: AlgorithmState,
) -> Dict[int, BaseStationNode]:
    nodes = {bs: BaseStationNode(bs) for bs in topo.base_stations}
    access = inst.access
    alpha = config.step_sizes.alpha
    for k in range(inst.num_antennas):
        nodes[topo.bs_of_antenna[k]].antennas[k] = _OwnedAntenna(
            budget=float(inst.budgets[k]),
            alpha=float(alpha[k]),
            lam=float(start.lam[k]),
            served=tuple(sorted(access.served_sets[k])),
        )
    for n, antennas in enumerate(access.serving_sets):
        sl = access.user_slice(n)
        nodes[topo.host_bs_of_user[n]].users[n] = _HostedUser(
            antennas=antennas,
            owners=tuple(topo.bs_of_antenna[k] for k in antennas),
            gammas=inst.gains[sl].copy(),
            weight=float(inst.weights[n]),
            proximal=float(inst.proximal[n]),
            y=start.y[sl].astype(float).copy(),
            duals={k: float(start.lam[k]) for k in antennas},
            p=start.p[sl].astype(float).copy(),
        )
    return nodes


class _Observer:
    """Reads node state between rounds to build the trace; never sends or alters anything."""

    def __init__(self, inst: ProblemInstance, nodes: Dict[int, BaseStationNode]):
        self.inst = inst
        self.nodes = nodes

    def gather(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        access = self.inst.access
        p = np.zeros(access.num_variables)
        y = np.zeros(access.num_variables)
        lam = np.zeros(self.inst.num_antennas)
        for node in self.nodes.values():
            for n, u in node.users.items():
                sl = access.user_slice(n)
                p[sl] = u.p
                y[sl] = u.y
            for k, a in node.antennas.items():
                lam[k] = a.lam
        return p, y, lam


@dataclass
class DistributedResult:
    result: RunResult
    ledger: MessageLedger
    topology: NodeTopology
    nodes: Dict[int, BaseStationNode]

    @property
    def trace(self) -> List[IterationRecord]:
        return self.result.trace

    @property
    def state(self) -> AlgorithmState:
        return self.result.state


def backhaul_bound(inst: ProblemInstance, topo: NodeTopology) -> int:
    """Per-round backhaul ceiling 2·Σ_n |{k ∈ R(n): owner(k) ≠ host(n)}|."""
    remote = 0
    for n, antennas in enumerate(inst.access.serving_sets):
        remote += sum(1 for k in antennas if topo.bs_of_antenna[k] != topo.host_bs_of_user[n])
    return 2 * remote


def run_distributed(inst: ProblemInstance, node_topology: NodeTopology, config: RunConfig) -> DistributedResult:
    """
    Run the iteration as synchronous BS rounds.

    Iterates match :func:`dascomp.core.engine.run` to round-off: owners add
    reports in the same order the engine's antenna sums do. Raises
    ``NotConvergedError`` like the engine, with a ``DistributedResult`` attached.
    """
    node_topology.check(inst)
    start = config.initial_state.copy() if config.initial_state is not None else initial_state(inst)
    start.check_shapes(inst)

    nodes = _build_nodes(inst, node_topology, config, start)
    ledger = MessageLedger()
    net = _Backhaul(ledger)
    observer = _Observer(inst, nodes)
    beta = config.step_sizes.beta
    trace: List[IterationRecord] = []
    converged = False
    t = 0
    logger.debug("distributed run: %d BSs, %d backhaul links",
                 len(nodes), len(node_topology.routes(inst)))

    while t < config.max_iterations:
        _, y, lam = observer.gather()

        for node in nodes.values():
            for msg in node.solve_powers(t):
                net.send(msg)
        reports = {bs: net.deliver(bs) for bs in nodes}
        net.barrier(t)

        for bs, node in nodes.items():
            for msg in node.update_duals(reports[bs], t):
                net.send(msg)
        duals = {bs: net.deliver(bs) for bs in nodes}
        net.barrier(t)

        for bs, node in nodes.items():
            node.update_auxiliaries(duals[bs], t, beta)

        p, y_next, lam_next = observer.gather()
        record = iteration_record(inst, config, p, lam, y, lam_next, y_next, t,
                                  messages=ledger.backhaul_count(t))
        trace.append(record)
        t += 1
        if max(record.lambda_step_inf, record.y_step_inf) <= config.stop_tol:
            converged = True
            break

    p, y, lam = observer.gather()
    state = AlgorithmState(p=p, y=y, lam=lam, t=t, diagnostics=trace)
    outcome = DistributedResult(
        result=RunResult(state=state, converged=converged, trace=trace),
        ledger=ledger,
        topology=node_topology,
        nodes=nodes,
    )
    if not converged:
        logger.warning("distributed run stopped after %d rounds without converging", t)
        raise NotConvergedError(f"not converged after {t} rounds", result=outcome)
    logger.debug("distributed run converged in %d rounds, %d backhaul messages",
                 t, ledger.backhaul_count())
    return outcome
