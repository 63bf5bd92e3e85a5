"""Time-slotted network environment.

Each slot has a fixed ISL snapshot and a per-link volume budget ``rate * tau``.
Within a slot, requests get repeated decision epochs (several hops per slot),
visited round-robin by current node id and then by request id. A hop costs

    transmission (volume / rate) + propagation (distance / c)
    + processing (constant) + queuing (transmission time of earlier commits
      on the same link this slot)

and a request stops for the slot when it is delivered, fails, chooses no
transmission, is refused by the link budget, would overrun the slot, or would
reuse a link it already crossed in this slot. A stopped request waits in
on-board storage until the next slot; the wait counts toward its delay.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .constellation import ABSENT, N_ROLES, ConfigurationError, TopologySnapshot
from .features import NONE, N_ACTIONS, Observation, observe_lists, phased_reward
from .traffic import Outcome, RequestRuntime

LIGHT_SPEED_KM_S = 299792.458


class TopologyError(KeyError):
    pass


class ConsistencyError(RuntimeError):
    pass


class InvalidActionError(ValueError):
    pass


ETA_MODES = ("capacity", "deadline")


@dataclass(frozen=True)
class SimParams:
    tau_s: float = 60.0
    n_slots: int = 60
    rate_min_bps: float = 5e9
    rate_max_bps: float = 10e9
    processing_s: float = 1e-3
    light_speed_km_s: float = LIGHT_SPEED_KM_S
    # charge the time a stopped request spends waiting for the next slot
    charge_slot_wait: bool = True
    # "capacity": residual slot budget over demand; "deadline": the same ratio
    # counted only over the time left before the request's deadline
    eta_mode: str = "capacity"

    def validate(self) -> None:
        if self.rate_min_bps > self.rate_max_bps:
            raise ConfigurationError(
                f"rate_min_bps ({self.rate_min_bps}) exceeds rate_max_bps ({self.rate_max_bps})")
        if not self.rate_min_bps > 0:
            raise ConfigurationError("rate_min_bps must be > 0")
        if not self.tau_s > 0 or self.n_slots < 1:
            raise ConfigurationError("tau_s must be > 0 and n_slots >= 1")
        if self.processing_s < 0:
            raise ConfigurationError("processing_s must be >= 0")
        if self.eta_mode not in ETA_MODES:
            raise ConfigurationError(f"eta_mode must be one of {ETA_MODES}, got {self.eta_mode!r}")


@dataclass(frozen=True)
class LinkState:
    edge: tuple[int, int]
    rate_bps: float
    capacity_bits: float
    used_bits: float

    @property
    def residual_bits(self) -> float:
        return self.capacity_bits - self.used_bits


@dataclass(frozen=True)
class DelayBreakdown:
    transmission_s: float
    propagation_s: float
    processing_s: float
    queuing_s: float

    @property
    def total_s(self) -> float:
        return self.transmission_s + self.propagation_s + self.processing_s + self.queuing_s

    def as_dict(self) -> dict:
        return {"transmission_s": self.transmission_s, "propagation_s": self.propagation_s,
                "processing_s": self.processing_s, "queuing_s": self.queuing_s,
                "total_s": self.total_s}


class LinkStates:
    """Rate, budget and usage of every directed ISL of one slot, indexed ``[i][role]``."""

    def __init__(self, snapshot: TopologySnapshot, rate_bps: np.ndarray, tau_s: float):
        present = snapshot.neighbors != ABSENT
        rate = np.where(present, rate_bps, 0.0)
        self.neighbors = snapshot.neighbors
        self.rate = rate.tolist()
        self.capacity = (rate * tau_s).tolist()
        self.used = np.zeros_like(rate).tolist()
        self.busy_s = np.zeros_like(rate).tolist()  # transmission time already committed

    @property
    def rate_bps(self) -> np.ndarray:
        return np.array(self.rate)

    @property
    def capacity_bits(self) -> np.ndarray:
        return np.array(self.capacity)

    @property
    def used_bits(self) -> np.ndarray:
        return np.array(self.used)

    def state(self, i: int, role: int) -> Optional[LinkState]:
        j = int(self.neighbors[i, role])
        if j == ABSENT:
            return None
        return LinkState((i, j), self.rate[i][role], self.capacity[i][role], self.used[i][role])


def sample_link_rates(snapshot: TopologySnapshot, rng_seed, params: SimParams = SimParams()) -> LinkStates:
    params.validate()
    rng = np.random.default_rng(rng_seed)
    rate = rng.uniform(params.rate_min_bps, params.rate_max_bps, size=snapshot.neighbors.shape)
    return LinkStates(snapshot, rate, params.tau_s)


def _role(snapshot: TopologySnapshot, i: int, j: int) -> int:
    try:
        return snapshot.role_of(i, j)
    except KeyError:
        raise TopologyError(f"ISL ({i}, {j}) absent in slot {snapshot.slot}") from None


def hop_delay(request, edge: tuple[int, int], links: LinkStates, snapshot: TopologySnapshot,
              params: SimParams = SimParams()) -> DelayBreakdown:
    """Delay of carrying ``request`` over ``edge`` given what is already committed on it."""
    i, j = edge
    role = _role(snapshot, i, j)
    return _delay(request.demand_bits, links.rate[i][role], float(snapshot.distances[i, role]),
                  links.busy_s[i][role], params)


def _delay(demand, rate, distance_km, busy_s, params) -> DelayBreakdown:
    return DelayBreakdown(demand / rate, distance_km / params.light_speed_km_s,
                          params.processing_s, busy_s)


def adjudicate(rt: RequestRuntime) -> Outcome:
    q = rt.request
    if rt.elapsed_delay_s > q.deadline_s:
        rt.outcome = Outcome.FAILED
    elif rt.current_node == q.destination:
        rt.outcome = Outcome.DELIVERED
    else:
        rt.outcome = Outcome.IN_FLIGHT
    return rt.outcome


class SlotLedger:
    """Link usage, node queues and committed hops of one time slot."""

    def __init__(self, snapshot: TopologySnapshot, links: LinkStates,
                 params: SimParams = SimParams()):
        self.slot = snapshot.slot
        self.snapshot = snapshot
        self.links = links
        self.params = params
        n = snapshot.size
        self.node_queues: list[dict[int, RequestRuntime]] = [{} for _ in range(n)]
        self.decisions: list[tuple[int, tuple[int, int], DelayBreakdown]] = []
        self._queued: set[int] = set()
        self._nbr = snapshot.neighbors.tolist()
        self._pos = snapshot.positions.tolist()
        self._dist = snapshot.distances.tolist()
        norm = np.asarray(links.rate) / params.rate_max_bps
        self._norm_rate = norm.tolist()
        self._supply = norm.sum(axis=1).tolist()

    # -- queue bookkeeping -------------------------------------------------
    def enqueue(self, rt: RequestRuntime) -> None:
        if rt.id in self._queued:
            raise ConsistencyError(f"request {rt.id} already queued")
        self._queued.add(rt.id)
        self.node_queues[rt.current_node][rt.id] = rt

    def queue_length(self, j: int) -> int:
        return len(self.node_queues[j])

    def supply(self, j: int) -> float:
        return self._supply[j]

    def norm_rate(self, i: int, role: int) -> float:
        return self._norm_rate[i][role]

    def dist(self, a: int, b: int) -> float:
        return math.dist(self._pos[a], self._pos[b])

    def neighbors(self, i: int) -> list[int]:
        return self._nbr[i]

    def residual(self, i: int, role: int) -> float:
        return self.links.capacity[i][role] - self.links.used[i][role]

    # -- features ------------------------------------------------------------
    def observe(self, request, node: int, elapsed_s: float = 0.0):
        links = self.links
        cap, used = links.capacity[node], links.used[node]
        residual = [cap[r] - used[r] for r in range(N_ROLES)]
        if self.params.eta_mode == "deadline":
            p = self.params
            slack = request.deadline_s - elapsed_s - p.processing_s
            rate, busy, dist = links.rate[node], links.busy_s[node], self._dist[node]
            residual = [min(residual[r], rate[r] * (slack - busy[r] - dist[r] / p.light_speed_km_s))
                        for r in range(N_ROLES)]
        nq = self.node_queues
        return observe_lists(request, node, self._nbr[node], self.dist, self._supply,
                             lambda j: len(nq[j]), self._norm_rate[node], residual)

    def delay_for(self, request, node: int, role: int) -> DelayBreakdown:
        return _delay(request.demand_bits, self.links.rate[node][role], self._dist[node][role],
                      self.links.busy_s[node][role], self.params)

    def remove(self, rt: RequestRuntime) -> None:
        self.node_queues[rt.current_node].pop(rt.id, None)


def admit_hop(ledger: SlotLedger, rt: RequestRuntime, edge: tuple[int, int],
              delay: Optional[DelayBreakdown] = None) -> Optional[DelayBreakdown]:
    """Commit one hop if the link budget allows it; ``None`` means refused, nothing changed."""
    i, j = edge
    if rt.current_node != i:
        raise ConsistencyError(f"request {rt.id} is at {rt.current_node}, not at {i}")
    if not rt.in_flight:
        raise ConsistencyError(f"request {rt.id} is {rt.outcome.value}")
    role = _role(ledger.snapshot, i, j)
    links = ledger.links
    q = rt.request
    if links.used[i][role] + q.demand_bits > links.capacity[i][role]:
        return None
    if delay is None:
        delay = ledger.delay_for(q, i, role)
    links.used[i][role] += q.demand_bits
    links.busy_s[i][role] += delay.transmission_s
    ledger.node_queues[i].pop(rt.id, None)
    rt.current_node = j
    ledger.node_queues[j][rt.id] = rt
    rt.elapsed_delay_s += delay.total_s
    rt.slot_clock_s += delay.total_s
    rt.hop_log.append((ledger.slot, i, j))
    ledger.decisions.append((rt.id, (i, j), delay))
    return delay


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    mask: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    next_mask: np.ndarray
    done: bool


@dataclass
class Decision:
    """Everything a policy may look at for one (request, node) decision epoch."""

    runtime: RequestRuntime
    node: int
    observation: Observation
    ledger: SlotLedger

    @property
    def request(self):
        return self.runtime.request

    @property
    def mask(self) -> np.ndarray:
        return self.observation.mask


class Policy(Protocol):
    def act(self, decision: Decision) -> int: ...


@dataclass
class EpochRecord:
    slot: int
    request_id: int
    node: int
    action: int
    reward: float
    delay: Optional[DelayBreakdown]
    outcome: Outcome

    def as_json(self) -> str:
        return json.dumps({
            "slot": self.slot, "request_id": self.request_id, "node": self.node,
            "action": "none" if self.action == NONE else self.action,
            "reward": self.reward,
            "delay_breakdown": None if self.delay is None else self.delay.as_dict(),
            "outcome": self.outcome.value,
        })


@dataclass
class SlotResult:
    transitions: list[Transition] = field(default_factory=list)
    records: list[EpochRecord] = field(default_factory=list)
    reward: float = 0.0
    epochs: int = 0


class TransitionBuilder:
    """Pairs each decision with the state of the same request at its next decision."""

    def __init__(self, sink: Optional[Callable[[Transition], None]] = None):
        self.sink = sink
        self._pending: dict[int, tuple] = {}

    def _emit(self, t: Transition, out: list) -> None:
        out.append(t)
        if self.sink is not None:
            self.sink(t)

    def observe(self, rid: int, obs: Observation, out: list) -> None:
        prev = self._pending.pop(rid, None)
        if prev is not None:
            s, m, a, r = prev
            self._emit(Transition(s, m, a, r, obs.features, obs.mask, False), out)

    def record(self, rid: int, obs: Observation, action: int, reward: float, done: bool,
               out: list) -> None:
        if done:
            zeros = np.zeros_like(obs.features)
            self._emit(Transition(obs.features, obs.mask, action, reward, zeros,
                                  obs.mask, True), out)
        else:
            self._pending[rid] = (obs.features, obs.mask, action, reward)

    def flush(self, out: list) -> None:
        """Close transitions of requests the cycle ended on (bootstrapped, not terminal)."""
        for rid in sorted(self._pending):
            s, m, a, r = self._pending[rid]
            self._emit(Transition(s, m, a, r, s, m, False), out)
        self._pending.clear()


def step_slot(ledger: SlotLedger, serving_queue: Sequence[RequestRuntime], policy: Policy,
              builder: Optional[TransitionBuilder] = None, keep_records: bool = False) -> SlotResult:
    """Serve one slot; requests in ``serving_queue`` are advanced in place."""
    params = ledger.params
    tau = params.tau_s
    builder = builder if builder is not None else TransitionBuilder()
    result = SlotResult()
    out = result.transitions

    active = []
    for rt in serving_queue:
        if rt.in_flight:
            rt.slot_clock_s = 0.0
            ledger.enqueue(rt)
            active.append(rt)

    used_edges: dict[int, set] = {}
    while active:
        active.sort(key=lambda r: (r.current_node, r.request.id))
        still = []
        for rt in active:
            q = rt.request
            i = rt.current_node
            feats, mask = ledger.observe(q, i, rt.elapsed_delay_s)
            obs = Observation(np.array(feats), np.array(mask, dtype=bool))
            builder.observe(q.id, obs, out)
            action = int(policy.act(Decision(rt, i, obs, ledger)))
            if not 0 <= action < N_ACTIONS or not mask[action]:
                raise InvalidActionError(
                    f"policy chose masked action {action} for request {q.id} at {i} (mask {mask})")

            delay = None
            moved = False
            reward = 0.0
            if action != NONE:
                j = ledger.neighbors(i)[action]
                edges = used_edges.setdefault(q.id, set())
                cand = ledger.delay_for(q, i, action)
                if (i, j) not in edges and rt.slot_clock_s + cand.total_s <= tau:
                    delay = admit_hop(ledger, rt, (i, j), cand)
                    if delay is not None:
                        moved = True
                        edges.add((i, j))
                        reward = phased_reward(q, i, action, obs, delay, reached=j)

            if moved:
                if adjudicate(rt) is Outcome.IN_FLIGHT:
                    still.append(rt)
            else:
                # stopped for this slot; waits in storage until the next one
                if params.charge_slot_wait:
                    rt.elapsed_delay_s += max(tau - rt.slot_clock_s, 0.0)
                rt.slot_clock_s = tau
                adjudicate(rt)
            if not rt.in_flight:
                ledger.remove(rt)

            result.reward += reward
            result.epochs += 1
            builder.record(q.id, obs, action, reward, not rt.in_flight, out)
            if keep_records:
                result.records.append(EpochRecord(ledger.slot, q.id, i, action, reward, delay,
                                                  rt.outcome))
        active = still
    return result
