"""Tile-based collision backstop for the conflict zone.

The watchdog treats crossing the stop line as a commitment.  A vehicle that,
after the coming step, could no longer brake to a halt before the line must
be *admitted* first.  Admission is granted only when the vehicle's footprint
is disjoint from the tiles still ahead of every admitted vehicle on another
approach.  Otherwise the advisory is cut to the hold speed, further capped so
the vehicle can still stop at the line, and the vehicle waits until the
claimed tiles clear.

Admitted vehicles cannot stop before the line, so they always cross and
release their claims.  Claims only shrink as vehicles advance, which keeps
the claims of conflicting admitted vehicles disjoint at all times.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Mapping

from .core import Approach, Tile, Vehicle, occupied_tiles, tiles_between
from .engine import WorldState, next_speed, stop_distance, stoppable_speed
from .scenario import SimConfig, WatchdogParams


def claimed_tiles(vehicle: Vehicle, zone_side: float) -> frozenset[Tile]:
    """Tiles from the vehicle's rear bumper to the zone exit."""
    rear = vehicle.progress_m - vehicle.length_m
    if rear >= zone_side:
        return frozenset()
    return tiles_between(vehicle.approach, vehicle.maneuver, max(rear, 0.0), zone_side,
                         zone_side)


@dataclass
class TileGrid:
    """Current tile occupancy: tile -> (vehicle id, step it entered the tile)."""

    cells: dict[Tile, tuple[int, int]] = field(default_factory=dict)

    def update(self, world: WorldState) -> None:
        fresh: dict[Tile, tuple[int, int]] = {}
        for lane in world.lanes.values():
            for v in lane:
                for tile in occupied_tiles(v, world.sim.conflict_zone_m):
                    prev = self.cells.get(tile)
                    entered = prev[1] if prev is not None and prev[0] == v.id else world.time_s
                    # Same-lane vehicles can touch one tile at once; keep the earlier one.
                    if tile not in fresh or fresh[tile][1] > entered:
                        fresh[tile] = (v.id, entered)
        self.cells = fresh


class Watchdog:
    def __init__(self, sim: SimConfig, params: WatchdogParams = WatchdogParams()):
        self.sim = sim
        self.params = params
        self.admitted: set[int] = set()
        self.overrides = 0
        self._held: set[int] = set()
        self.grid = TileGrid()

    # -- bookkeeping ---------------------------------------------------------------

    def _refresh(self, world: WorldState) -> None:
        zone = self.sim.conflict_zone_m
        keep = set()
        for lane in world.lanes.values():
            revoke = False
            for v in lane:
                if v.id not in self.admitted:
                    break
                # A vehicle that can still stop before the line is not committed;
                # drop it and everything behind it.
                if revoke or (v.position_m >= 0
                              and stop_distance(v.speed_mps, v.decel_max) <= v.position_m):
                    revoke = True
                    continue
                if v.progress_m - v.length_m < zone:
                    keep.add(v.id)
        self.admitted = keep

    def _claims(self, world: WorldState) -> dict[int, tuple[Approach, frozenset[Tile]]]:
        zone = self.sim.conflict_zone_m
        out = {}
        for lane in world.lanes.values():
            for v in lane:
                if v.id in self.admitted:
                    out[v.id] = (v.approach, claimed_tiles(v, zone))
        return out

    def _predicted_speed(self, v: Vehicle, advisory: float) -> float:
        target = min(advisory, self.sim.v_max, v.v_max_type)
        return next_speed(v.speed_mps, target, v.accel_max, v.decel_max)

    # -- per-step entry point ------------------------------------------------------------

    def check_and_override(self, world: WorldState,
                           advisories: Mapping[int, float]) -> dict[int, float]:
        out = dict(advisories)
        if not self.params.enabled:
            return out
        self._refresh(world)
        claims = self._claims(world)
        zone = self.sim.conflict_zone_m

        # Each lane offers its first uncommitted vehicle; admitting it exposes
        # the next one, which is then considered in the same pass.
        heap: list = []
        lanes = {a: world.lanes[a] for a in Approach}
        cursor: dict[Approach, int] = {}

        def offer(a: Approach, idx: int) -> None:
            lane = lanes[a]
            while idx < len(lane) and lane[idx].id in self.admitted:
                idx += 1
            cursor[a] = idx
            if idx >= len(lane):
                return
            v = lane[idx]
            if v.position_m > self.params.watch_radius_m:
                return
            nxt = self._predicted_speed(v, out.get(v.id, self.sim.v_max))
            if v.position_m < 0 or nxt > stoppable_speed(v.position_m, v.decel_max):
                eta = v.position_m / v.speed_mps if v.speed_mps > 0 else math.inf
                heapq.heappush(heap, (eta, v.id, int(a)))

        for a in Approach:
            offer(a, 0)

        held_now = set()
        while heap:
            _, _, ai = heapq.heappop(heap)
            a = Approach(ai)
            v = lanes[a][cursor[a]]
            mine = tiles_between(v.approach, v.maneuver, 0.0, zone, zone)
            blocked = any(app != v.approach and not mine.isdisjoint(tiles)
                          for app, tiles in claims.values())
            if blocked and v.position_m >= 0:
                cap = min(self.params.v_hold, stoppable_speed(v.position_m, v.decel_max))
                out[v.id] = min(out.get(v.id, self.sim.v_max), cap)
                held_now.add(v.id)
                if v.id not in self._held:
                    self.overrides += 1
            else:
                self.admitted.add(v.id)
                claims[v.id] = (v.approach, claimed_tiles(v, zone))
                offer(a, cursor[a] + 1)
        self._held = held_now
        self.grid.update(world)
        return out
