"""Per-decision observation, action mask and phased reward.

An observation has one block of four features per neighbour role, in the
fixed role order of :mod:`leo_rrm.constellation`::

    [normalised rate, success probability, orientation, supply/demand]

and a 5-entry mask (four roles, then the "no transmission" action which is
always valid). Actions are plain ints: ``0..3`` pick a role, ``NONE`` keeps
the request where it is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constellation import ABSENT, N_ROLES

NONE = N_ROLES
N_ACTIONS = N_ROLES + 1
N_FEATURES = 4
OBS_DIM = N_ROLES * N_FEATURES
ORIENTATION_COLUMNS = tuple(range(2, OBS_DIM, N_FEATURES))

REACH_REWARD = 100.0
MIN_DELAY_S = 1e-3


@dataclass(frozen=True)
class Observation:
    features: np.ndarray  # (16,)
    mask: np.ndarray  # (5,) bool

    def block(self, role: int) -> np.ndarray:
        return self.features[role * N_FEATURES:(role + 1) * N_FEATURES]

    def orientation(self, role: int) -> float:
        return float(self.features[role * N_FEATURES + 2])

    def supply_demand(self, role: int) -> float:
        return float(self.features[role * N_FEATURES + 3])


def orientation(request, i: int, j, snapshot) -> int:
    """+2 reaching the destination, +1 closing in, -1 not closing in, 0 for no link."""
    if j is None or j == ABSENT or not snapshot.has_edge(i, j):
        return 0
    d = request.destination
    if j == d:
        return 2
    return 1 if snapshot.distance(j, d) < snapshot.distance(i, d) else -1


def supply_demand(request, i: int, j, snapshot, ledger) -> float:
    if j is None or j == ABSENT or not snapshot.has_edge(i, j):
        return 0.0
    if j == request.destination:
        return 1.0
    return ledger.supply(j) / max(ledger.queue_length(j), 1)


def success_prob(request, edge, link_state) -> float:
    """Residual capacity of the link relative to the request's volume, clipped to [0, 1]."""
    if edge is None or link_state is None:
        return 0.0
    return min(1.0, max(0.0, link_state.residual_bits / request.demand_bits))


def build_observation(request, node: int, snapshot, ledger, elapsed_s: float = 0.0) -> Observation:
    feats, mask = ledger.observe(request, node, elapsed_s)
    return Observation(np.array(feats), np.array(mask, dtype=bool))


def observe_lists(request, node, nbr_row, dist_to, supply, queue_len,
                  norm_rate_row, residual_row):
    """Hot-path observation builder over plain Python lists.

    ``dist_to(a, b)`` returns the distance between two satellites.
    """
    dest = request.destination
    demand = request.demand_bits
    feats = [0.0] * OBS_DIM
    mask = [False] * N_ACTIONS
    mask[NONE] = True
    d_here = None
    for role in range(N_ROLES):
        j = nbr_row[role]
        if j == ABSENT:
            continue
        mask[role] = True
        b = role * N_FEATURES
        feats[b] = norm_rate_row[role]
        eta = residual_row[role] / demand
        feats[b + 1] = 1.0 if eta >= 1.0 else (eta if eta > 0.0 else 0.0)
        if j == dest:
            feats[b + 2] = 2.0
            feats[b + 3] = 1.0
        else:
            if d_here is None:
                d_here = dist_to(node, dest)
            feats[b + 2] = 1.0 if dist_to(j, dest) < d_here else -1.0
            q = queue_len(j)
            feats[b + 3] = supply[j] / (q if q > 1 else 1)
    return feats, mask


def phased_reward(request, node: int, action: int, observation: Observation,
                  delay=None, reached=None) -> float:
    """Reward of one decision epoch.

    ``reached`` is the satellite the hop landed on (``None`` when nothing was
    transmitted). When it is omitted it is taken from ``action`` together with
    the orientation block (a target with orientation 2 is the destination).
    """
    mask = observation.mask
    if action == NONE or not mask[action]:
        return 0.0
    if reached is None:
        hit = observation.orientation(action) == 2.0
    else:
        hit = reached == request.destination
    if hit:
        return REACH_REWARD
    if delay is None:
        return 0.0
    dest_reachable = any(observation.orientation(r) == 2.0 for r in range(N_ROLES) if mask[r])
    any_neighbor = bool(np.any(mask[:N_ROLES]))
    if dest_reachable or not any_neighbor:
        return 0.0
    total = delay.total_s if hasattr(delay, "total_s") else float(delay)
    return observation.orientation(action) * observation.supply_demand(action) / max(total, MIN_DELAY_S)


def euclid(a, b) -> float:
    return math.dist(a, b)
