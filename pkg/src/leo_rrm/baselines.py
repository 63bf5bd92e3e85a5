"""Greedy comparison policies and the orientation-blind learned variant."""

from __future__ import annotations

import enum

import numpy as np

from .constellation import N_ROLES
from .features import NONE
from .policy import NeuralPolicy, PolicyParameters


# differences below these count as ties, which go to the lower role index
DIST_TIE_KM = 1e-6
DELAY_TIE_S = 1e-12


class BaselineKind(enum.Enum):
    MDG = "mdg"
    SPG = "spg"
    LTG = "ltg"


def spg_select(request, node: int, ledger, mask) -> int:
    """Valid neighbour closest to the destination; ties go to the lower role index."""
    nbr = ledger.neighbors(node)
    dest = request.destination
    best, best_d = NONE, np.inf
    for role in range(N_ROLES):
        if not mask[role]:
            continue
        d = ledger.dist(nbr[role], dest)
        if d < best_d - DIST_TIE_KM:
            best, best_d = role, d
    return best


def ltg_select(request, node: int, ledger, mask) -> int:
    """Admissible neighbour with the least single-hop delay; ``NONE`` if none fits."""
    best, best_t = NONE, np.inf
    for role in range(N_ROLES):
        if not mask[role] or ledger.residual(node, role) < request.demand_bits:
            continue
        t = ledger.delay_for(request, node, role).total_s
        if t < best_t - DELAY_TIE_S:
            best, best_t = role, t
    return best


class SPGPolicy:
    uses_observation = False

    def act(self, decision) -> int:
        return spg_select(decision.request, decision.node, decision.ledger, decision.mask)


class LTGPolicy:
    uses_observation = False

    def act(self, decision) -> int:
        return ltg_select(decision.request, decision.node, decision.ledger, decision.mask)


def mdg_parameters(seed=0, **hyper) -> PolicyParameters:
    """Same network as the full agent, but the orientation features are never shown to it."""
    return PolicyParameters.init(seed=seed, withhold_orientation=True, **hyper)


def mdg_policy(params: PolicyParameters, mode: str = "greedy", rng=None) -> NeuralPolicy:
    if not params.withhold_orientation:
        raise ValueError("MDG parameters must withhold the orientation features")
    return NeuralPolicy(params, mode, rng)
