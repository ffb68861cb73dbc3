"""Domain types and conflict geometry for a single-lane four-way intersection.

Coordinates are metres with the origin at the centre of the square conflict
zone, x pointing east and y pointing north.  Traffic keeps right.  Every
movement is described in the frame of the northern approach and rotated into
place for the other three.

Through and left-turn lanes run 1.5 m off the road axis.  Right turns use a
channelised corner path (radius 1.5 m about the zone corner) feeding an added
receiving lane, so they never share a tile with any other movement.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping, Optional

ZONE_SIDE_M = 12.0
GRID_N = 4
LANE_OFFSET_M = 1.5
RIGHT_TURN_RADIUS_M = 1.5


class Approach(enum.IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3

    def __str__(self) -> str:
        return self.name


class Maneuver(str, enum.Enum):
    LEFT = "left"
    STRAIGHT = "straight"
    RIGHT = "right"

    def __str__(self) -> str:
        return self.value


class PriorityClass(enum.IntEnum):
    """Ordered so that a larger value means stronger precedence."""

    NORMAL = 0
    TRANSIT = 1
    EMERGENCY = 2

    def __str__(self) -> str:
        return self.name


Tile = tuple[int, int]


@dataclass
class Vehicle:
    id: int
    approach: Approach
    maneuver: Maneuver
    priority: PriorityClass
    occupancy: int
    energy_pref: float
    length_m: float
    accel_max: float
    decel_max: float
    v_max_type: float
    position_m: float
    speed_mps: float
    depart_time_s: int
    arrive_time_s: Optional[int] = None
    cumulative_wait_s: float = 0.0
    current_wait_s: float = 0.0
    near_zone_wait_s: float = 0.0
    near_zone_time_s: float = 0.0
    stop_count: int = 0
    type_name: str = "car"
    exit_approach: Optional[Approach] = None
    speeds: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not 0.0 <= self.energy_pref <= 1.0:
            raise ValueError(f"energy_pref must lie in [0, 1], got {self.energy_pref}")
        if self.occupancy < 1:
            raise ValueError("occupancy must be a positive integer")
        if min(self.length_m, self.accel_max, self.decel_max, self.v_max_type) <= 0:
            raise ValueError("kinematic limits must be positive")
        if not self.speeds:
            self.speeds.append(self.speed_mps)

    @property
    def progress_m(self) -> float:
        """Distance travelled by the front bumper past the stop line."""
        return -self.position_m


@dataclass(frozen=True)
class PathFootprint:
    tiles: frozenset[Tile]

    def __post_init__(self) -> None:
        if not self.tiles:
            raise ValueError("a footprint must cover at least one tile")

    def overlaps(self, other: "PathFootprint") -> bool:
        return not self.tiles.isdisjoint(other.tiles)


# -- geometry ---------------------------------------------------------------


def _rotate(x: float, y: float, approach: Approach) -> tuple[float, float]:
    # Clockwise quarter turns take the northern entry onto E, S and W.
    for _ in range(int(approach)):
        x, y = y, -x
    return x, y


def _north_point(maneuver: Maneuver, frac: float, half: float) -> tuple[float, float]:
    if maneuver is Maneuver.STRAIGHT:
        return -LANE_OFFSET_M, half - 2 * half * frac
    if maneuver is Maneuver.LEFT:
        radius = half + LANE_OFFSET_M
        theta = math.pi + 0.5 * math.pi * frac
        return half + radius * math.cos(theta), half + radius * math.sin(theta)
    theta = -0.5 * math.pi * frac
    return (-half + RIGHT_TURN_RADIUS_M * math.cos(theta),
            half + RIGHT_TURN_RADIUS_M * math.sin(theta))


def path_point(approach: Approach, maneuver: Maneuver, frac: float,
               zone_side: float = ZONE_SIDE_M) -> tuple[float, float]:
    """Centre-line point at fraction ``frac`` in [0, 1] of the in-zone path."""
    frac = min(1.0, max(0.0, frac))
    x, y = _north_point(maneuver, frac, zone_side / 2.0)
    return _rotate(x, y, approach)


def path_length(maneuver: Maneuver, zone_side: float = ZONE_SIDE_M) -> float:
    if maneuver is Maneuver.STRAIGHT:
        return zone_side
    if maneuver is Maneuver.LEFT:
        return 0.5 * math.pi * (zone_side / 2.0 + LANE_OFFSET_M)
    return 0.5 * math.pi * RIGHT_TURN_RADIUS_M


def exit_approach(approach: Approach, maneuver: Maneuver) -> Approach:
    """Compass side through which a movement leaves the intersection."""
    shift = {Maneuver.STRAIGHT: 2, Maneuver.LEFT: 1, Maneuver.RIGHT: 3}[maneuver]
    return Approach((int(approach) + shift) % 4)


def exit_side(approach: Approach, maneuver: Maneuver, zone_side: float = ZONE_SIDE_M) -> Approach:
    """Zone boundary actually reached by the end of the movement's centre line."""
    x, y = path_point(approach, maneuver, 1.0, zone_side)
    if abs(y) >= abs(x):
        return Approach.N if y > 0 else Approach.S
    return Approach.E if x > 0 else Approach.W


def tile_of(x: float, y: float, n: int = GRID_N, side: float = ZONE_SIDE_M) -> Tile:
    size = side / n
    col = min(n - 1, max(0, math.floor((x + side / 2.0) / size)))
    row = min(n - 1, max(0, math.floor((side / 2.0 - y) / size)))
    return row, col


_SAMPLES_PER_M = 4


@lru_cache(maxsize=None)
def _samples(approach: Approach, maneuver: Maneuver, zone_side: float = ZONE_SIDE_M,
             n: int = GRID_N) -> tuple[Tile, ...]:
    count = round(zone_side * _SAMPLES_PER_M)
    return tuple(tile_of(*path_point(approach, maneuver, k / count, zone_side), n, zone_side)
                 for k in range(count + 1))


def tiles_between(approach: Approach, maneuver: Maneuver, start_m: float, end_m: float,
                  zone_side: float = ZONE_SIDE_M, n: int = GRID_N) -> frozenset[Tile]:
    """Tiles touched by the centre line between two in-zone progress marks.

    Progress is measured along the stop-line-to-exit distance of ``zone_side``
    metres and mapped proportionally onto the movement's curve.  The curve is
    sampled on one fixed grid of progress points and the interval is widened
    to the enclosing samples, so a sub-interval always yields a subset of the
    tiles of any interval containing it.
    """
    lo = max(0.0, start_m)
    hi = min(zone_side, end_m)
    if hi < lo:
        return frozenset()
    pts = _samples(approach, maneuver, zone_side, n)
    spacing = zone_side / (len(pts) - 1)
    k0 = math.floor(lo / spacing + 1e-9)
    k1 = min(len(pts) - 1, math.ceil(hi / spacing - 1e-9))
    return frozenset(pts[k0:k1 + 1])


def occupied_tiles(vehicle: Vehicle, zone_side: float = ZONE_SIDE_M) -> frozenset[Tile]:
    front = vehicle.progress_m
    rear = front - vehicle.length_m
    if front <= 0.0 or rear >= zone_side:
        return frozenset()
    return tiles_between(vehicle.approach, vehicle.maneuver, rear, front, zone_side)


# -- footprints and conflicts --------------------------------------------------


@lru_cache(maxsize=1)
def _footprint_table() -> dict[tuple[Approach, Maneuver], PathFootprint]:
    raw = json.loads(resources.files("lidsa.data").joinpath("footprints.json").read_text())
    table = {}
    for key, tiles in raw["footprints"].items():
        a, m = key.split(":")
        table[Approach[a], Maneuver(m)] = PathFootprint(frozenset((r, c) for r, c in tiles))
    return table


def footprint(approach: Approach, maneuver: Maneuver) -> PathFootprint:
    return _footprint_table()[approach, maneuver]


@lru_cache(maxsize=None)
def conflicts(a: Approach, m_a: Maneuver, b: Approach, m_b: Maneuver) -> bool:
    if a == b:
        raise ValueError(f"conflict test needs two distinct approaches, got {a} twice")
    return footprint(a, m_a).overlaps(footprint(b, m_b))


def conflict_set(a: Approach, active: Mapping[Approach, Maneuver]) -> set[Approach]:
    if a not in active:
        raise KeyError(f"approach {a} is not active")
    return {b for b in active if b != a and conflicts(a, active[a], b, active[b])}


def leader_of(approach: Approach, vehicles: Iterable[Vehicle],
              horizon_m: float = math.inf) -> Optional[Vehicle]:
    """Vehicle nearest the stop line on ``approach``; ties go to the lower id."""
    best = None
    for v in vehicles:
        if v.approach != approach or v.position_m < 0 or v.position_m > horizon_m:
            continue
        if best is None or (v.position_m, v.id) < (best.position_m, best.id):
            best = v
    return best
