"""Comparison controllers: pre-timed signal, SCATS-style plan selection, AIM
tile reservations and GLOSA speed advice against a virtual signal plan.

Signal gating is expressed through ``Control.closed``; the kernel turns a
closed approach into a stop-line barrier for every vehicle that can still
stop, so vehicles already committed run the amber.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

from .core import Approach, Maneuver, Tile, conflicts, path_point, tile_of
from .engine import Control, WorldState
from .metrics import directional_capacity
from .scenario import AimParams, FixedParams, GlosaParams, ScatsParams, SimConfig

NS = frozenset({Approach.N, Approach.S})
EW = frozenset({Approach.E, Approach.W})


@dataclass(frozen=True)
class SignalPlan:
    g_ns: float
    g_ew: float
    yellow: float = 4.0

    def __post_init__(self) -> None:
        if min(self.g_ns, self.g_ew) <= 0 or self.yellow < 0:
            raise ValueError("green times must be positive and yellow non-negative")

    @property
    def cycle(self) -> float:
        return self.g_ns + self.g_ew + 2 * self.yellow

    def phase(self, t: float) -> tuple[str, str]:
        """Signal aspect ('G', 'Y' or 'R') for the NS and EW groups at time t."""
        c = t % self.cycle
        if c < self.g_ns:
            return "G", "R"
        if c < self.g_ns + self.yellow:
            return "Y", "R"
        if c < self.g_ns + self.yellow + self.g_ew:
            return "R", "G"
        return "R", "Y"

    def closed(self, t: float) -> frozenset[Approach]:
        ns, ew = self.phase(t)
        out = set()
        if ns != "G":
            out |= NS
        if ew != "G":
            out |= EW
        return frozenset(out)

    def time_to_green(self, group: frozenset, t: float) -> float:
        """Seconds until the group's next green onset; 0 while green."""
        c = t % self.cycle
        onset = 0.0 if group == NS else self.g_ns + self.yellow
        end = onset + (self.g_ns if group == NS else self.g_ew)
        if onset <= c < end:
            return 0.0
        return (onset - c) % self.cycle


def group_of(a: Approach) -> frozenset:
    return NS if a in NS else EW


def fixed_cycle_control(t: float, plan: SignalPlan = SignalPlan(30.0, 30.0, 4.0)) -> frozenset[Approach]:
    return plan.closed(t)


class FixedCycleController:
    name = "fixed"

    def __init__(self, params: FixedParams = FixedParams()):
        self.plan = SignalPlan(params.g_ns, params.g_ew, params.yellow)

    def control(self, world: WorldState) -> Control:
        return Control({}, fixed_cycle_control(world.time_s, self.plan))


# -- SCATS --------------------------------------------------------------------------------


def select_plan(ds: float, params: ScatsParams = ScatsParams()) -> int:
    for i, (upper, _, _) in enumerate(params.plans):
        if ds < upper:
            return i
    return len(params.plans) - 1


class ScatsController:
    """Picks one of three plans at each cycle boundary from the previous
    cycle's measured arrivals (degree of saturation via the capacity formula)."""

    name = "scats"

    def __init__(self, params: ScatsParams = ScatsParams()):
        self.params = params
        self.plans = [SignalPlan(g_ns, g_ew, params.yellow) for _, g_ns, g_ew in params.plans]
        self.current = 0
        self.cycle_start = 0
        self.history: list[tuple[int, float, int]] = []
        self._counted: set[int] = set()
        self._counts = {NS: 0, EW: 0}

    @property
    def plan(self) -> SignalPlan:
        return self.plans[self.current]

    def degree_of_saturation(self, cycle_len: float) -> float:
        cap = directional_capacity(self.params.capacity_green_s, self.params.capacity_cycle_s,
                                   self.params.saturation_flow)
        scale = 3600.0 / cycle_len
        return max(self._counts[NS] * scale / cap, self._counts[EW] * scale / cap)

    def _count_arrivals(self, world: WorldState) -> None:
        for a in Approach:
            for v in world.lanes[a]:
                if v.id not in self._counted:
                    self._counted.add(v.id)
                    self._counts[group_of(a)] += 1

    def control(self, world: WorldState) -> Control:
        t = world.time_s
        if t - self.cycle_start >= self.plan.cycle:
            ds = self.degree_of_saturation(t - self.cycle_start)
            self.current = select_plan(ds, self.params)
            self.history.append((t, ds, self.current))
            self.cycle_start = t
            self._counts = {NS: 0, EW: 0}
        self._count_arrivals(world)
        return Control({}, self.plan.closed(t - self.cycle_start))


# -- AIM -----------------------------------------------------------------------------------


@dataclass
class Reservation:
    """Granted crossing.  ``cells`` maps a sub-step tick to the tiles held then."""

    vehicle_id: int
    slot_s: int
    cells: dict[int, frozenset[Tile]] = field(default_factory=dict)

    @property
    def tiles(self) -> frozenset[Tile]:
        return frozenset().union(*self.cells.values()) if self.cells else frozenset()

    def tile_windows(self) -> dict[Tile, tuple[int, int]]:
        """First and last tick each tile is held."""
        out: dict[Tile, tuple[int, int]] = {}
        for tick, tiles in self.cells.items():
            for tile in tiles:
                lo, hi = out.get(tile, (tick, tick))
                out[tile] = (min(lo, tick), max(hi, tick))
        return out


_AIM_SAMPLES_PER_M = 4


@lru_cache(maxsize=None)
def _box_path(approach: Approach, maneuver: Maneuver, params: AimParams,
              zone_side: float) -> tuple[Tile, ...]:
    """Tiles along the in-box path, one sample per 0.25 m of progress."""
    lead = (params.zone_side_m - zone_side) / 2.0
    p0 = path_point(approach, maneuver, 0.0, zone_side)
    p1 = path_point(approach, maneuver, 1.0, zone_side)
    q = path_point(approach, maneuver, 0.01, zone_side)
    dx, dy = q[0] - p0[0], q[1] - p0[1]
    n_in = math.hypot(dx, dy)
    entry_dir = (dx / n_in, dy / n_in)
    r = path_point(approach, maneuver, 0.99, zone_side)
    ex, ey = p1[0] - r[0], p1[1] - r[1]
    n_out = math.hypot(ex, ey)
    exit_dir = (ex / n_out, ey / n_out)
    total = 2 * lead + zone_side
    count = round(total * _AIM_SAMPLES_PER_M)
    tiles = []
    for k in range(count + 1):
        s = total * k / count
        if s < lead:
            back = lead - s
            x, y = p0[0] - entry_dir[0] * back, p0[1] - entry_dir[1] * back
        elif s <= lead + zone_side:
            x, y = path_point(approach, maneuver, (s - lead) / zone_side, zone_side)
        else:
            fwd = s - lead - zone_side
            x, y = p1[0] + exit_dir[0] * fwd, p1[1] + exit_dir[1] * fwd
        tiles.append(tile_of(x, y, params.grid_n, params.zone_side_m))
    return tuple(tiles)


def box_tiles(approach: Approach, maneuver: Maneuver, rear: float, front: float,
              params: AimParams, zone_side: float = 12.0) -> frozenset[Tile]:
    pts = _box_path(approach, maneuver, params, zone_side)
    total = params.zone_side_m + 0.0
    spacing = total / (len(pts) - 1)
    lo, hi = max(0.0, rear), min(total, front)
    if hi < lo:
        return frozenset()
    k0 = math.ceil(lo / spacing - 1e-9)
    k1 = math.floor(hi / spacing + 1e-9)
    if k1 < k0:
        return frozenset({pts[round((lo + hi) / 2.0 / spacing)]})
    return frozenset(pts[k0:k1 + 1])


class AimController:
    """First-come reservations of (tile, tick) cells in a 30 m box.

    Slots start on whole steps; the table itself runs on finer ticks of
    ``time_resolution_s``.
    """

    name = "aim"

    def __init__(self, sim: SimConfig, params: AimParams = AimParams()):
        self.sim = sim
        self.params = params
        self.ticks = round(1.0 / params.time_resolution_s)
        self.table: dict[tuple[Tile, int], int] = {}
        self.granted: dict[int, Reservation] = {}
        self._lead = (params.zone_side_m - sim.conflict_zone_m) / 2.0

    def plan_cells(self, approach: Approach, maneuver: Maneuver, length: float,
                   slot: int, v: float) -> dict[int, frozenset[Tile]]:
        """(tick -> tiles) for a box crossing at constant speed from ``slot``.

        Each tick holds the tiles swept since the previous tick, so the
        reservation covers the ground crossed between samples.
        """
        dx = v / self.ticks
        cells = {}
        j = 0
        while True:
            front = j * dx
            if front - dx - length > self.params.zone_side_m:
                break
            cells[slot * self.ticks + j] = box_tiles(
                approach, maneuver, front - dx - length, front, self.params,
                self.sim.conflict_zone_m)
            j += 1
        return cells

    def _free(self, cells: dict[int, frozenset[Tile]]) -> bool:
        return all((tile, k) not in self.table for k, tiles in cells.items() for tile in tiles)

    def request(self, vid: int, approach: Approach, maneuver: Maneuver, length: float,
                distance_to_box: float, t: int) -> Optional[Reservation]:
        v = self.sim.v_max
        earliest = t + math.ceil(max(0.0, distance_to_box) / v)
        for slot in range(earliest, earliest + self.params.max_scan_s):
            cells = self.plan_cells(approach, maneuver, length, slot, v)
            if self._free(cells):
                res = Reservation(vid, slot, cells)
                for k, tiles in cells.items():
                    for tile in tiles:
                        self.table[tile, k] = vid
                self.granted[vid] = res
                return res
        return None

    def prune(self, t: int) -> None:
        now = t * self.ticks
        for key in [k for k in self.table if k[1] < now]:
            del self.table[key]
        for vid in [vid for vid, r in self.granted.items() if max(r.cells) < now]:
            del self.granted[vid]

    def control(self, world: WorldState) -> Control:
        t = world.time_s
        if t % self.params.prune_every == 0:
            self.prune(t)
        adv = {}
        radius = self.params.request_radius_m + self._lead
        for a in Approach:
            for veh in world.lanes[a]:
                d = veh.position_m
                if d < 0 or d > radius:
                    continue
                to_box = d - self._lead
                res = self.granted.get(veh.id)
                if res is None:
                    res = self.request(veh.id, a, veh.maneuver, veh.length_m, to_box, t)
                if res is None or t >= res.slot_s or to_box <= 0:
                    continue
                adv[veh.id] = min(self.sim.v_max, max(0.0, to_box / (res.slot_s - t)))
        return Control(adv)


# -- GLOSA -------------------------------------------------------------------------------------


class GlosaController:
    """Advisory speeds against a virtual fixed-cycle plan; no physical signal."""

    name = "glosa"

    def __init__(self, sim: SimConfig, fixed: FixedParams = FixedParams(),
                 params: GlosaParams = GlosaParams()):
        self.sim = sim
        self.plan = SignalPlan(fixed.g_ns, fixed.g_ew, fixed.yellow)
        self.params = params

    def advisory(self, d: float, t_green: float) -> float:
        if t_green <= 0:
            return self.sim.v_max
        return min(self.sim.v_max, max(self.sim.v_min, d / t_green))

    def control(self, world: WorldState) -> Control:
        t = world.time_s
        adv = {}
        for a in Approach:
            for v in world.inbound(a, self.sim.advisory_horizon_m):
                adv[v.id] = self.advisory(v.position_m, self.plan.time_to_green(group_of(a), t))
        # FIFO patch on approach leaders: a close conflicting pair sends the
        # farther vehicle to its following green window.
        leaders = []
        for a in Approach:
            lane = world.inbound(a, self.sim.advisory_horizon_m)
            if lane:
                leaders.append(lane[0])
        leaders.sort(key=lambda v: (v.position_m, v.id))
        arrival: dict[int, float] = {}
        for j, v in enumerate(leaders):
            tg = self.plan.time_to_green(group_of(v.approach), t)
            speed = adv[v.id]
            eta = v.position_m / speed
            for _ in range(3):
                clash = any(conflicts(u.approach, u.maneuver, v.approach, v.maneuver)
                            and abs(arrival[u.id] - eta) < self.params.min_separation_s
                            for u in leaders[:j])
                if not clash:
                    break
                tg = tg + self.plan.cycle if tg > 0 else self._next_onset(v.approach, t)
                speed = self.advisory(v.position_m, tg)
                eta = v.position_m / speed
            adv[v.id] = speed
            arrival[v.id] = eta
        return Control(adv)

    def _next_onset(self, a: Approach, t: float) -> float:
        """Start of the following green window for a group that is green now."""
        c = t % self.plan.cycle
        onset = 0.0 if group_of(a) == NS else self.plan.g_ns + self.plan.yellow
        return (onset - c) % self.plan.cycle or self.plan.cycle
