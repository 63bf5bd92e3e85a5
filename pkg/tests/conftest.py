import numpy as np
import pytest

from leo_rrm.constellation import (ABSENT, ConstellationSpec, TopologySnapshot, build_constellation,
                                   propagate)
from leo_rrm.netsim import LinkStates, SimParams, SlotLedger


def line_snapshot(n_nodes: int, spacing_km: float = 1000.0, slot: int = 0) -> TopologySnapshot:
    """Nodes on a straight line; node k links fore to k+1 and aft to k-1."""
    pos = np.zeros((n_nodes, 3))
    pos[:, 0] = np.arange(n_nodes) * spacing_km
    nbr = np.full((n_nodes, 4), ABSENT, dtype=np.int64)
    dist = np.zeros((n_nodes, 4))
    for k in range(n_nodes):
        if k + 1 < n_nodes:
            nbr[k, 0] = k + 1
            dist[k, 0] = spacing_km
        if k - 1 >= 0:
            nbr[k, 1] = k - 1
            dist[k, 1] = spacing_km
    return TopologySnapshot(slot, 0.0, pos, np.zeros(n_nodes), nbr, dist)


def fixed_rate_ledger(snapshot, rate_bps=10e9, params=None):
    params = params or SimParams()
    links = LinkStates(snapshot, np.full(snapshot.neighbors.shape, float(rate_bps)), params.tau_s)
    return SlotLedger(snapshot, links, params)


@pytest.fixture(scope="session")
def iridium_roster():
    return build_constellation(ConstellationSpec.iridium())


@pytest.fixture(scope="session")
def small_walker():
    """A 4x6 polar constellation used by the baseline oracle checks."""
    return build_constellation(ConstellationSpec(planes=4, sats_per_plane=6, altitude_km=780.0,
                                                 inclination_deg=86.4))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
