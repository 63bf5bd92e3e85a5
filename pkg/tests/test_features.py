import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leo_rrm.constellation import ABSENT, ConstellationSpec, build_constellation, propagate
from leo_rrm.features import (NONE, OBS_DIM, Observation, build_observation, orientation,
                              phased_reward, success_prob, supply_demand)
from leo_rrm.netsim import DelayBreakdown, LinkState, SimParams, admit_hop, sample_link_rates, SlotLedger
from leo_rrm.traffic import RequestRuntime, ServiceRequest

from conftest import fixed_rate_ledger, line_snapshot


def _req(src, dst, demand=5e9, deadline=5.0, rid=0):
    return ServiceRequest(rid, src, dst, 0, demand, deadline)


def _obs(blocks, mask):
    f = np.zeros(OBS_DIM)
    for role, blk in blocks.items():
        f[role * 4:(role + 1) * 4] = blk
    return Observation(f, np.array(mask, dtype=bool))


# -- supply/demand ----------------------------------------------------------

def test_supply_demand_to_destination_is_one():
    snap = line_snapshot(4)
    ledger = fixed_rate_ledger(snap)
    assert supply_demand(_req(0, 1), 0, 1, snap, ledger) == 1.0


def test_supply_demand_arithmetic():
    # a hub with 4 outgoing links at half the maximum rate and two requests queued
    pos = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [1, 1, 0], [1, -1, 0]], float) * 1000
    nbr = np.full((5, 4), ABSENT)
    nbr[0] = [1, ABSENT, ABSENT, ABSENT]
    nbr[1] = [2, 0, 3, 4]
    for k in (2, 3, 4):
        nbr[k, 1] = 1
    dist = np.where(nbr != ABSENT, 1000.0, 0.0)
    from leo_rrm.constellation import TopologySnapshot
    snap = TopologySnapshot(0, 0.0, pos, np.zeros(5), nbr, dist)
    ledger = fixed_rate_ledger(snap, rate_bps=5e9)
    for rid in (10, 11):
        rt = RequestRuntime.start(_req(1, 2, rid=rid))
        ledger.enqueue(rt)
    assert supply_demand(_req(0, 4), 0, 1, snap, ledger) == pytest.approx(1.0)


def test_supply_demand_absent_role_is_zero():
    snap = line_snapshot(3)
    ledger = fixed_rate_ledger(snap)
    assert supply_demand(_req(0, 2), 0, None, snap, ledger) == 0.0
    assert supply_demand(_req(0, 2), 0, 2, snap, ledger) == 0.0  # not adjacent


def test_supply_demand_empty_queue_uses_unit_denominator():
    snap = line_snapshot(4)
    ledger = fixed_rate_ledger(snap, rate_bps=10e9)
    assert supply_demand(_req(0, 3), 0, 1, snap, ledger) == pytest.approx(2.0)


# -- success probability --------------------------------------------------

def test_success_prob_values():
    q = _req(0, 1, demand=4e9)
    assert success_prob(q, (0, 1), LinkState((0, 1), 1e9, 6e10, 0.0)) == 1.0
    assert success_prob(q, (0, 1), LinkState((0, 1), 1e9, 6e10, 6e10 - 2e9)) == pytest.approx(0.5)
    assert success_prob(q, (0, 1), LinkState((0, 1), 1e9, 6e10, 6e10)) == 0.0
    assert success_prob(q, None, None) == 0.0


# -- orientation ----------------------------------------------------------

def test_orientation_cases():
    snap = line_snapshot(5)
    q = _req(2, 4)
    assert orientation(q, 2, 3, snap) == 1
    assert orientation(q, 2, 1, snap) == -1
    assert orientation(q, 3, 4, snap) == 2
    assert orientation(q, 2, None, snap) == 0
    assert orientation(q, 2, 4, snap) == 0


def test_orientation_tie_is_not_closer():
    from leo_rrm.constellation import TopologySnapshot
    # node 2 and its neighbour 0 are both exactly 1000 km from the destination 1
    pos = np.array([[0, 0, 0], [1000, 0, 0], [1000, 1000, 0]], float)
    nbr = np.full((3, 4), ABSENT)
    nbr[2, 0] = 0
    nbr[0, 1] = 2
    dist = np.where(nbr != ABSENT, np.linalg.norm(pos[2] - pos[0]), 0.0)
    snap = TopologySnapshot(0, 0.0, pos, np.zeros(3), nbr, dist)
    assert orientation(_req(2, 1), 2, 0, snap) == -1


# -- reward -----------------------------------------------------------------

def test_reward_destination_bonus():
    obs = _obs({0: [1, 1, 2, 1]}, [1, 0, 0, 0, 1])
    assert phased_reward(_req(0, 1), 0, 0, obs, delay=0.6, reached=1) == 100.0
    assert phased_reward(_req(0, 1), 0, 0, obs) == 100.0


def test_reward_middle_branch_arithmetic():
    obs = _obs({0: [1, 1, 1, 0.8], 1: [1, 1, -1, 0.3]}, [1, 1, 0, 0, 1])
    r = phased_reward(_req(0, 9), 0, 0, obs, delay=1.01, reached=1)
    assert r == pytest.approx(0.8 / 1.01, rel=1e-12)
    assert r == pytest.approx(0.792, abs=1e-3)


def test_reward_none_is_zero():
    obs = _obs({0: [1, 1, 1, 0.8]}, [1, 0, 0, 0, 1])
    assert phased_reward(_req(0, 9), 0, NONE, obs) == 0.0


def test_reward_zero_when_destination_reachable_but_skipped():
    obs = _obs({0: [1, 1, 2, 1], 1: [1, 1, 1, 0.5]}, [1, 1, 0, 0, 1])
    assert phased_reward(_req(0, 9), 0, 1, obs, delay=0.7, reached=5) == 0.0


def test_reward_delay_floor():
    obs = _obs({0: [1, 1, 1, 1.0]}, [1, 0, 0, 0, 1])
    d = DelayBreakdown(0.0, 0.0, 0.0, 0.0)
    assert phased_reward(_req(0, 9), 0, 0, obs, delay=d, reached=3) == pytest.approx(1000.0)


@settings(max_examples=100, deadline=None)
@given(chi=st.floats(1e-3, 50.0), delay=st.floats(1e-3, 100.0))
def test_reward_sign_property(chi, delay):
    closer = _obs({0: [1, 1, 1, chi]}, [1, 0, 0, 0, 1])
    away = _obs({0: [1, 1, -1, chi]}, [1, 0, 0, 0, 1])
    assert phased_reward(_req(0, 9), 0, 0, closer, delay=delay, reached=3) > 0
    assert phased_reward(_req(0, 9), 0, 0, away, delay=delay, reached=3) < 0


# -- observation -----------------------------------------------------------

def test_observation_on_line():
    snap = line_snapshot(5)
    ledger = fixed_rate_ledger(snap, rate_bps=10e9)
    obs = build_observation(_req(2, 4), 2, snap, ledger)
    assert obs.mask.tolist() == [True, True, False, False, True]
    assert obs.block(0).tolist() == [1.0, 1.0, 1.0, 2.0]
    assert obs.block(1).tolist() == [1.0, 1.0, -1.0, 2.0]
    assert not obs.features[8:].any()


def test_polar_satellite_mask(iridium_roster):
    for slot in range(60):
        snap = propagate(iridium_roster, slot, 60.0)
        polar = np.flatnonzero(np.abs(snap.latitude_deg) > 70.0)
        if polar.size:
            break
    i = int(polar[0])
    ledger = SlotLedger(snap, sample_link_rates(snap, 0))
    obs = build_observation(_req(i, (i + 30) % 66), i, snap, ledger)
    assert obs.mask.tolist() == [True, True, False, False, True]
    assert not obs.features[8:].any()


_SNAPS = {}


def _snapshot(shape, slot):
    key = (shape, slot)
    if key not in _SNAPS:
        spec = ConstellationSpec(*shape, 780.0, 86.4) if shape[0] != 4 else ConstellationSpec(4, 43, 550.0, 53.0)
        _SNAPS[key] = propagate(build_constellation(spec), slot, 60.0)
    return _SNAPS[key]


@settings(max_examples=60, deadline=None)
@given(shape=st.sampled_from([(6, 11), (4, 43), (3, 8)]), slot=st.integers(0, 59),
       seed=st.integers(0, 10_000), data=st.data())
def test_observation_invariants(shape, slot, seed, data):
    snap = _snapshot(shape, slot)
    n = snap.size
    ledger = SlotLedger(snap, sample_link_rates(snap, seed))
    rng = np.random.default_rng(seed)
    # load some links so the capacity ratio is exercised
    for _ in range(data.draw(st.integers(0, 30))):
        i = int(rng.integers(n))
        role = int(rng.integers(4))
        if snap.neighbors[i, role] != ABSENT:
            ledger.links.used[i][role] = ledger.links.capacity[i][role] * rng.uniform(0.9, 1.0)
    i = data.draw(st.integers(0, n - 1))
    d = data.draw(st.integers(0, n - 2))
    d = d + (d >= i)
    obs = build_observation(_req(i, d), i, snap, ledger)
    f = obs.features
    assert f.shape == (16,) and obs.mask.shape == (5,)
    assert obs.mask[NONE]
    for role in range(4):
        blk = obs.block(role)
        present = snap.neighbors[i, role] != ABSENT
        assert obs.mask[role] == present
        if not present:
            assert not blk.any()
            continue
        assert 0.0 <= blk[0] <= 1.0
        assert 0.0 <= blk[1] <= 1.0
        assert blk[2] in (-1.0, 1.0, 2.0)
        assert blk[3] >= 0.0


def test_deadline_eta_mode_sees_queueing():
    snap = line_snapshot(3)
    params = SimParams(eta_mode="deadline")
    ledger = fixed_rate_ledger(snap, rate_bps=10e9, params=params)
    q = _req(0, 2, demand=5e9, deadline=5.0)
    fresh = build_observation(q, 0, snap, ledger)
    assert fresh.block(0)[1] == 1.0
    # 4.6 s already committed leaves about 0.4 s, room for roughly 4 of the 5 Gbit
    ledger.links.busy_s[0][0] = 4.6
    mid = build_observation(q, 0, snap, ledger)
    assert 0.0 < mid.block(0)[1] < 1.0
    assert mid.block(0)[1] == pytest.approx((5.0 - 1e-3 - 4.6 - 1000 / 299792.458) * 10e9 / 5e9)
    ledger.links.busy_s[0][0] = 6.0
    assert build_observation(q, 0, snap, ledger).block(0)[1] == 0.0
    # the default mode ignores the committed time entirely
    plain = fixed_rate_ledger(snap, rate_bps=10e9)
    plain.links.busy_s[0][0] = 6.0
    assert build_observation(q, 0, snap, plain).block(0)[1] == 1.0


def test_admitted_hop_lowers_capacity_ratio():
    snap = line_snapshot(3)
    params = SimParams(tau_s=1.0)
    ledger = fixed_rate_ledger(snap, rate_bps=8e9, params=params)
    rt = RequestRuntime.start(_req(0, 2, demand=5e9))
    ledger.enqueue(rt)
    admit_hop(ledger, rt, (0, 1))
    obs = build_observation(_req(0, 2, demand=5e9, rid=1), 0, snap, ledger)
    assert obs.block(0)[1] == pytest.approx(3e9 / 5e9)
