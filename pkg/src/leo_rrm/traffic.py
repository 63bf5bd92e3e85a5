"""Batched service-request generation and per-request runtime records."""

from __future__ import annotations

import csv
import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .constellation import ConfigurationError

DEFAULT_DEMAND_BITS = 5e9
DEFAULT_DEADLINE_S = 5.0

TRACE_COLUMNS = ("id", "source", "destination", "arrival_slot", "demand_bits", "deadline_s")


class Outcome(enum.Enum):
    IN_FLIGHT = "in_flight"
    DELIVERED = "delivered"
    FAILED = "failed"


@dataclass(frozen=True)
class ServiceRequest:
    id: int
    source: int
    destination: int
    arrival_slot: int
    demand_bits: float
    deadline_s: float

    def __post_init__(self):
        if self.source == self.destination:
            raise ValueError(f"request {self.id}: source equals destination ({self.source})")
        if not self.demand_bits > 0:
            raise ValueError(f"request {self.id}: demand_bits must be > 0")
        if not self.deadline_s > 0:
            raise ValueError(f"request {self.id}: deadline_s must be > 0")


@dataclass(eq=False)
class RequestRuntime:
    """Mutable service state of one request; owned and advanced by the simulator."""

    request: ServiceRequest
    current_node: int
    elapsed_delay_s: float = 0.0
    # (slot, i, j) for every committed hop
    hop_log: list = field(default_factory=list)
    outcome: Outcome = Outcome.IN_FLIGHT
    # time since the start of the current slot at which the request is ready to move
    slot_clock_s: float = 0.0

    @classmethod
    def start(cls, request: ServiceRequest) -> "RequestRuntime":
        return cls(request=request, current_node=request.source)

    @property
    def id(self) -> int:
        return self.request.id

    @property
    def in_flight(self) -> bool:
        return self.outcome is Outcome.IN_FLIGHT


def generate_batch(
    slot: int,
    per_leo_count: int,
    rng_seed,
    n_satellites: int,
    demand_bits: float = DEFAULT_DEMAND_BITS,
    deadline_s: float = DEFAULT_DEADLINE_S,
    first_id: int = 0,
    deadline_range: Optional[tuple[float, float]] = None,
) -> list[ServiceRequest]:
    """``per_leo_count`` requests sourced at every satellite, destinations uniform over the rest.

    ``n_satellites`` may also be a roster (anything with ``len``). When
    ``deadline_range`` is given, deadlines are drawn uniformly from it instead
    of using the fixed ``deadline_s``.
    """
    n = n_satellites if isinstance(n_satellites, (int, np.integer)) else len(n_satellites)
    if n < 2:
        raise ConfigurationError("traffic needs at least 2 satellites")
    if per_leo_count < 0:
        raise ConfigurationError(f"per_leo_count must be >= 0, got {per_leo_count}")
    rng = np.random.default_rng(rng_seed)
    src = np.repeat(np.arange(n), per_leo_count)
    dst = rng.integers(0, n - 1, size=src.size)
    dst = dst + (dst >= src)
    if deadline_range is None:
        deadlines = np.full(src.size, float(deadline_s))
    else:
        lo, hi = deadline_range
        deadlines = rng.uniform(lo, hi, size=src.size)
    return [
        ServiceRequest(first_id + k, int(s), int(d), int(slot), float(demand_bits), float(dl))
        for k, (s, d, dl) in enumerate(zip(src, dst, deadlines))
    ]


def arrival_slots(n_slots: int, batches: int = 1, first_slot: int = 0) -> list[int]:
    """Arrival slots of ``batches`` batches spread evenly over the cycle."""
    if batches < 1:
        raise ConfigurationError("batches must be >= 1")
    usable = max(n_slots - 1 - first_slot, 1)
    if batches == 1:
        return [first_slot]
    return sorted({first_slot + (k * usable) // batches for k in range(batches)})


def generate_traffic(
    n_satellites: int,
    per_leo_count: int,
    n_slots: int,
    seed,
    batches: int = 1,
    first_slot: int = 0,
    demand_bits: float = DEFAULT_DEMAND_BITS,
    deadline_s: float = DEFAULT_DEADLINE_S,
    deadline_range: Optional[tuple[float, float]] = None,
    pattern: str = "batch",
) -> dict[int, list[ServiceRequest]]:
    """Whole-cycle request stream keyed by arrival slot.

    ``pattern="batch"`` splits the per-LEO count across ``batches`` evenly
    spaced arrival slots. ``pattern="uniform"`` draws every request's arrival
    slot independently and uniformly from the slots that still leave a
    serving slot in the cycle. Either way every LEO sources exactly
    ``per_leo_count`` requests.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    stream: dict[int, list[ServiceRequest]] = {}
    if pattern == "uniform":
        batch_ss, slot_ss = ss.spawn(2)
        pool = generate_batch(first_slot, per_leo_count, batch_ss, n_satellites, demand_bits,
                              deadline_s, deadline_range=deadline_range)
        last = max(n_slots - 2, first_slot)
        slots = np.random.default_rng(slot_ss).integers(first_slot, last + 1, size=len(pool))
        order = np.lexsort((np.arange(len(pool)), slots))
        for new_id, k in enumerate(order):
            q = pool[k]
            stream.setdefault(int(slots[k]), []).append(
                dataclasses.replace(q, id=new_id, arrival_slot=int(slots[k])))
        return stream
    if pattern != "batch":
        raise ConfigurationError(f"unknown arrival pattern {pattern!r}")
    slots = arrival_slots(n_slots, batches, first_slot)
    counts = [len(part) for part in np.array_split(np.arange(per_leo_count), len(slots))]
    next_id = 0
    for slot, count, sub in zip(slots, counts, ss.spawn(len(slots))):
        batch = generate_batch(slot, count, sub, n_satellites, demand_bits, deadline_s,
                               first_id=next_id, deadline_range=deadline_range)
        next_id += len(batch)
        stream[slot] = batch
    return stream


def merge_carryover(new_batch: Sequence[ServiceRequest],
                    carryover: Sequence[RequestRuntime]) -> list[RequestRuntime]:
    """Serving queue for a slot: unfinished requests first, then the newly arrived ones.

    Requests are passed in from the slot they arrived in, so they are first
    served in the slot after arrival.
    """
    for rt in carryover:
        if not rt.in_flight:
            raise ValueError(f"carryover request {rt.id} is {rt.outcome.value}, not in flight")
    return list(carryover) + [RequestRuntime.start(q) for q in new_batch]


def write_trace(requests: Sequence[ServiceRequest], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for q in requests:
            w.writerow([q.id, q.source, q.destination, q.arrival_slot,
                        repr(q.demand_bits), repr(q.deadline_s)])


def read_trace(path) -> list[ServiceRequest]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        ServiceRequest(int(r["id"]), int(r["source"]), int(r["destination"]),
                       int(r["arrival_slot"]), float(r["demand_bits"]), float(r["deadline_s"]))
        for r in rows
    ]
