"""Constellation geometry, circular-orbit propagation and per-slot ISL snapshots.

Satellites are indexed by a flat id ``plane * sats_per_plane + slot``. Every
satellite owns four laser terminals whose links are reported in a fixed role
order: intra-plane fore, intra-plane aft, inter-plane right, inter-plane left.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional

import numpy as np

EARTH_RADIUS_KM = 6371.0
MU_EARTH_KM3_S2 = 398600.4418

FORE, AFT, RIGHT, LEFT = 0, 1, 2, 3
N_ROLES = 4
ROLE_NAMES = ("fore", "aft", "right", "left")
ABSENT = -1

# Above this inclination the constellation is laid out as a Walker star.
STAR_INCLINATION_DEG = 80.0


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class ConstellationSpec:
    planes: int
    sats_per_plane: int
    altitude_km: float = 780.0
    inclination_deg: float = 86.4
    # Extra in-plane phase per plane, as a fraction of the in-plane spacing.
    phasing_offset: float = 0.0
    seam_crosslinks_enabled: bool = False
    polar_latitude_cutoff_deg: float = 70.0

    def validate(self) -> None:
        if int(self.planes) != self.planes or self.planes < 1:
            raise ConfigurationError(f"planes must be a positive integer, got {self.planes!r}")
        if int(self.sats_per_plane) != self.sats_per_plane or self.sats_per_plane < 1:
            raise ConfigurationError(
                f"sats_per_plane must be a positive integer, got {self.sats_per_plane!r}"
            )
        if not self.altitude_km > 0:
            raise ConfigurationError(f"altitude_km must be > 0, got {self.altitude_km!r}")
        if not 0 < self.inclination_deg <= 180:
            raise ConfigurationError(
                f"inclination_deg must be in (0, 180], got {self.inclination_deg!r}"
            )

    @property
    def size(self) -> int:
        return self.planes * self.sats_per_plane

    @property
    def is_star(self) -> bool:
        return self.inclination_deg >= STAR_INCLINATION_DEG

    @classmethod
    def iridium(cls) -> "ConstellationSpec":
        return cls(planes=6, sats_per_plane=11, altitude_km=780.0, inclination_deg=86.4)

    @classmethod
    def walker(cls, planes: int, sats_per_plane: int, altitude_km: float = 550.0,
               inclination_deg: float = 53.0, **kw) -> "ConstellationSpec":
        return cls(planes=planes, sats_per_plane=sats_per_plane, altitude_km=altitude_km,
                   inclination_deg=inclination_deg, **kw)


class SatelliteId(NamedTuple):
    plane_index: int
    slot_index: int
    flat_id: int


@dataclass(frozen=True)
class Roster:
    """Orbital elements of every satellite of a constellation (circular orbits)."""

    spec: ConstellationSpec
    raan_rad: np.ndarray
    phase0_rad: np.ndarray
    radius_km: float
    mean_motion_rad_s: float

    def __len__(self) -> int:
        return self.spec.size

    @property
    def period_s(self) -> float:
        return 2.0 * np.pi / self.mean_motion_rad_s

    def satellite_id(self, flat_id: int) -> SatelliteId:
        if not 0 <= flat_id < self.spec.size:
            raise IndexError(f"satellite {flat_id} not in roster of {self.spec.size}")
        plane, slot = divmod(int(flat_id), self.spec.sats_per_plane)
        return SatelliteId(plane, slot, int(flat_id))

    def flat_id(self, plane_index: int, slot_index: int) -> int:
        s = self.spec
        if not (0 <= plane_index < s.planes and 0 <= slot_index < s.sats_per_plane):
            raise IndexError(f"({plane_index}, {slot_index}) outside {s.planes}x{s.sats_per_plane}")
        return plane_index * s.sats_per_plane + slot_index


def build_constellation(spec: ConstellationSpec) -> Roster:
    spec.validate()
    P, S = spec.planes, spec.sats_per_plane
    raan_span = np.pi if spec.is_star else 2.0 * np.pi
    plane = np.repeat(np.arange(P), S)
    slot = np.tile(np.arange(S), P)
    raan = plane * (raan_span / P)
    phase0 = (slot + spec.phasing_offset * plane) * (2.0 * np.pi / S)
    radius = EARTH_RADIUS_KM + spec.altitude_km
    n = float(np.sqrt(MU_EARTH_KM3_S2 / radius**3))
    raan.setflags(write=False)
    phase0.setflags(write=False)
    return Roster(spec, raan, phase0, radius, n)


@functools.lru_cache(maxsize=32)
def _static_neighbors(spec: ConstellationSpec) -> np.ndarray:
    """Role table before the time-dependent polar rule is applied."""
    P, S = spec.planes, spec.sats_per_plane
    nbr = np.full((P * S, N_ROLES), ABSENT, dtype=np.int64)
    for p in range(P):
        for k in range(S):
            i = p * S + k
            if S >= 2:
                nbr[i, FORE] = p * S + (k + 1) % S
            if S >= 3:
                nbr[i, AFT] = p * S + (k - 1) % S
            if P >= 2:
                right, left = p + 1, p - 1
                # With two planes a wrap would list the same peer twice.
                wraps = P >= 3 and (not spec.is_star or spec.seam_crosslinks_enabled)
                if right < P or wraps:
                    nbr[i, RIGHT] = (right % P) * S + k
                if left >= 0 or wraps:
                    nbr[i, LEFT] = (left % P) * S + k
    nbr.setflags(write=False)
    return nbr


@dataclass(frozen=True)
class TopologySnapshot:
    slot: int
    time_s: float
    positions: np.ndarray  # (N, 3) ECI km
    latitude_deg: np.ndarray  # (N,)
    neighbors: np.ndarray  # (N, 4) flat ids, ABSENT where no link
    distances: np.ndarray  # (N, 4) km, 0 where no link

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    def present(self) -> np.ndarray:
        return self.neighbors != ABSENT

    def has_edge(self, i: int, j: int) -> bool:
        return bool(np.any(self.neighbors[i] == j))

    def role_of(self, i: int, j: int) -> int:
        hits = np.flatnonzero(self.neighbors[i] == j)
        if hits.size == 0:
            raise KeyError(f"no ISL ({i}, {j}) in slot {self.slot}")
        return int(hits[0])

    def distance(self, i: int, j: int) -> float:
        return float(np.linalg.norm(self.positions[i] - self.positions[j]))

    def edges(self) -> Iterable[tuple[int, int, float]]:
        for i, role in zip(*np.nonzero(self.present())):
            yield int(i), int(self.neighbors[i, role]), float(self.distances[i, role])


def positions_at(roster: Roster, time_s: float) -> np.ndarray:
    spec = roster.spec
    inc = np.deg2rad(spec.inclination_deg)
    u = roster.phase0_rad + roster.mean_motion_rad_s * time_s
    cu, su = np.cos(u), np.sin(u)
    co, so = np.cos(roster.raan_rad), np.sin(roster.raan_rad)
    r = roster.radius_km
    return np.column_stack((
        r * (co * cu - so * su * np.cos(inc)),
        r * (so * cu + co * su * np.cos(inc)),
        r * su * np.sin(inc),
    ))


def propagate(roster: Roster, slot: int, tau_s: float) -> TopologySnapshot:
    """Snapshot of the ISL graph at the start of ``slot`` (epoch ``slot * tau_s``)."""
    spec = roster.spec
    t = slot * tau_s
    pos = positions_at(roster, t)
    lat = np.rad2deg(np.arcsin(np.clip(pos[:, 2] / roster.radius_km, -1.0, 1.0)))

    nbr = _static_neighbors(spec).copy()
    polar = np.abs(lat) > spec.polar_latitude_cutoff_deg
    for role in (RIGHT, LEFT):
        col = nbr[:, role]
        has = col != ABSENT
        drop = has & (polar | polar[np.where(has, col, 0)])
        col[drop] = ABSENT

    dist = np.zeros(nbr.shape)
    present = nbr != ABSENT
    rows, roles = np.nonzero(present)
    dist[rows, roles] = np.linalg.norm(pos[rows] - pos[nbr[rows, roles]], axis=1)

    for a in (pos, lat, nbr, dist):
        a.setflags(write=False)
    return TopologySnapshot(int(slot), float(t), pos, lat, nbr, dist)


def neighbor_roles(snapshot: TopologySnapshot, i: int | SatelliteId) -> tuple[Optional[int], ...]:
    """The 4-tuple (fore, aft, right, left) of neighbour ids, ``None`` where absent."""
    idx = i.flat_id if isinstance(i, SatelliteId) else int(i)
    return tuple(None if j == ABSENT else int(j) for j in snapshot.neighbors[idx])


def write_edge_csv(snapshots: Iterable[TopologySnapshot], path) -> int:
    """Dump directed edges as ``slot,i,j,distance_km`` rows; returns the row count."""
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "i", "j", "distance_km"])
        for snap in snapshots:
            for i, j, d in snap.edges():
                w.writerow([snap.slot, i, j, repr(d)])
                n += 1
    return n
