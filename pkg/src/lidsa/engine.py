"""Fixed-step (1 s) microscopic kernel for the four single-lane approaches.

Speeds update first and positions follow with the new speed.  With a
deceleration bound ``b`` a vehicle therefore covers exactly
``stop_distance(v, b)`` metres after the current step if it brakes fully, and
all car-following and stop-line constraints are expressed through that exact
discrete distance.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Protocol

import numpy as np

from .core import Approach, Maneuver, Vehicle, conflicts, exit_side, occupied_tiles
from .metrics import RunMetrics, StepSample, summarize, vc_ratio
from .scenario import DemandScenario, Params, SimConfig, VehicleTypeProfile

log = logging.getLogger(__name__)


def latency_buffer(sim: SimConfig) -> float:
    """Seconds between entering the advisory horizon and reaching the near zone."""
    return (sim.advisory_horizon_m - sim.near_zone_m) / sim.v_max


def stop_distance(v: float, decel: float) -> float:
    """Distance covered after this step when braking at ``decel`` from speed v."""
    n = math.floor(v / decel)
    return n * v - decel * n * (n + 1) / 2.0


def stoppable_speed(distance: float, decel: float) -> float:
    """Largest speed for this step that still allows a stop within ``distance``."""
    if distance <= 0:
        return 0.0
    n = 0
    while True:
        v = (distance + decel * n * (n + 1) / 2.0) / (n + 1)
        if v < (n + 1) * decel:
            return v
        n += 1


def next_speed(v: float, target: float, accel: float, decel: float) -> float:
    return max(0.0, min(v + accel, max(target, v - decel)))


def follow_cap(gap: float, leader_speed: float, decel: float, leader_decel: float) -> float:
    """Speed bound keeping at least the standstill gap if both vehicles brake.

    ``gap`` is measured after the leader's move and already net of the
    standstill gap.  The leader is assumed to brake at least as hard as the
    follower, which makes the terminal gap the binding one.
    """
    if gap <= 0:
        return 0.0
    reach = gap + stop_distance(leader_speed, max(decel, leader_decel))
    return min(gap, stoppable_speed(reach, decel))


# -- world state -----------------------------------------------------------------


@dataclass
class Control:
    """One step of controller output.

    ``advisories`` maps vehicle id to an advisory speed; vehicles without an
    entry drive at the network limit.  ``closed`` lists approaches whose stop
    line acts as a barrier this step (signal red or amber).
    """

    advisories: dict[int, float] = field(default_factory=dict)
    closed: frozenset[Approach] = frozenset()


class Controller(Protocol):
    name: str

    def control(self, world: "WorldState") -> Control: ...


@dataclass
class WorldState:
    sim: SimConfig
    time_s: int = 0
    lanes: dict[Approach, list[Vehicle]] = field(
        default_factory=lambda: {a: [] for a in Approach})
    completed: list[Vehicle] = field(default_factory=list)
    samples: list[StepSample] = field(default_factory=list)
    pending: dict[Approach, deque] = field(
        default_factory=lambda: {a: deque() for a in Approach})
    generated_total: int = 0
    spawned_total: int = 0
    conflict_events: int = 0

    def active(self) -> list[Vehicle]:
        return [v for a in Approach for v in self.lanes[a]]

    @property
    def n_active(self) -> int:
        return sum(len(lane) for lane in self.lanes.values())

    def inbound(self, approach: Approach, horizon_m: float = math.inf) -> list[Vehicle]:
        """Vehicles before the stop line within ``horizon_m``, nearest first."""
        return [v for v in self.lanes[approach] if 0 <= v.position_m <= horizon_m]

    def check_conservation(self) -> None:
        if self.spawned_total != self.n_active + len(self.completed):
            raise AssertionError(
                f"t={self.time_s}: spawned {self.spawned_total} != "
                f"active {self.n_active} + completed {len(self.completed)}")


# -- demand ------------------------------------------------------------------------


@dataclass(frozen=True)
class Movement:
    approach: Approach
    maneuver: Maneuver
    rate_vph: float
    emergency: bool = False


def movements(demand: DemandScenario) -> list[Movement]:
    out = []
    for a in Approach:
        straight = demand.ns_straight if a in (Approach.N, Approach.S) else demand.ew_straight
        out.append(Movement(a, Maneuver.STRAIGHT, straight))
        out.append(Movement(a, Maneuver.LEFT, demand.turns * demand.left_share))
        out.append(Movement(a, Maneuver.RIGHT, demand.turns * (1.0 - demand.left_share)))
        out.append(Movement(a, Maneuver.STRAIGHT, demand.emergency / 4.0, emergency=True))
    return out


def spawn(demand: DemandScenario, rng: np.random.Generator, t: int, sim: SimConfig,
          types: Mapping[str, VehicleTypeProfile], next_id: Callable[[], int]) -> list[Vehicle]:
    """Bernoulli arrivals for one second, one trial per movement."""
    born = []
    for mv in movements(demand):
        if rng.random() >= mv.rate_vph / 3600.0:
            continue
        if mv.emergency:
            profile = types["ambulance"]
        else:
            profile = types["bus"] if rng.random() < demand.transit_share else types["car"]
        alpha = float(rng.random())
        born.append(Vehicle(
            id=next_id(), approach=mv.approach, maneuver=mv.maneuver,
            priority=profile.priority, occupancy=profile.occupancy, energy_pref=alpha,
            length_m=profile.length_m, accel_max=profile.accel, decel_max=profile.decel,
            v_max_type=profile.v_max, position_m=sim.edge_length_m,
            speed_mps=min(sim.v_max, profile.v_max), depart_time_s=t, type_name=profile.name,
        ))
    return born


def _try_insert(world: WorldState, approach: Approach) -> None:
    queue = world.pending[approach]
    if not queue:
        return
    sim = world.sim
    veh: Vehicle = queue[0]
    lane = world.lanes[approach]
    cap = min(sim.v_max, veh.v_max_type)
    if lane:
        last = lane[-1]
        gap = sim.edge_length_m - (last.position_m + last.length_m) - sim.standstill_gap_m
        if gap < 0:
            return
        cap = min(cap, follow_cap(gap, last.speed_mps, veh.decel_max, last.decel_max))
    queue.popleft()
    veh.depart_time_s = world.time_s
    veh.position_m = sim.edge_length_m
    veh.speed_mps = cap
    veh.speeds = [cap]
    lane.append(veh)
    world.spawned_total += 1


# -- kinematics -----------------------------------------------------------------------


def step(world: WorldState, advisories: Mapping[int, float],
         closed: Iterable[Approach] = ()) -> WorldState:
    """Advance ``world`` by one step in place and return it."""
    sim = world.sim
    closed = frozenset(closed)
    known = {v.id for lane in world.lanes.values() for v in lane}
    for vid in advisories:
        if vid not in known:
            log.debug("ignoring advisory for unknown vehicle %s", vid)
    t_next = world.time_s + 1
    exit_at = sim.conflict_zone_m
    for approach in Approach:
        lane = world.lanes[approach]
        kept = []
        leader: Optional[Vehicle] = None
        leader_gone = False
        for veh in lane:
            v = veh.speed_mps
            ceiling = min(sim.v_max, veh.v_max_type)
            d = veh.position_m
            if d < 0:
                target = ceiling
            else:
                target = min(advisories.get(veh.id, sim.v_max), ceiling)
                if approach in closed and stop_distance(v, veh.decel_max) <= d:
                    target = min(target, stoppable_speed(d, veh.decel_max))
            if leader is not None and not leader_gone:
                gap = d - (leader.position_m + leader.length_m) - sim.standstill_gap_m
                target = min(target, follow_cap(gap, leader.speed_mps,
                                                veh.decel_max, leader.decel_max))
            new_v = next_speed(v, target, veh.accel_max, veh.decel_max)
            if 0 <= d <= sim.near_zone_m:
                veh.near_zone_time_s += sim.step_s
            veh.speed_mps = new_v
            veh.position_m = d - new_v * sim.step_s
            veh.speeds.append(new_v)
            if new_v < sim.stop_speed_mps:
                veh.cumulative_wait_s += sim.step_s
                veh.current_wait_s += sim.step_s
                if 0 <= veh.position_m <= sim.near_zone_m:
                    veh.near_zone_wait_s += sim.step_s
                if v >= sim.stop_speed_mps:
                    veh.stop_count += 1
            else:
                veh.current_wait_s = 0.0
            leader = veh
            if veh.position_m <= -(exit_at + veh.length_m):
                veh.arrive_time_s = t_next
                veh.exit_approach = exit_side(veh.approach, veh.maneuver, world.sim.conflict_zone_m)
                world.completed.append(veh)
                leader_gone = True
            else:
                leader_gone = False
                kept.append(veh)
        world.lanes[approach] = kept
    world.time_s = t_next
    return world


def count_conflicts(world: WorldState) -> int:
    """Pairs of conflicting movements currently sharing a conflict-zone tile."""
    inside = []
    for lane in world.lanes.values():
        for v in lane:
            tiles = occupied_tiles(v, world.sim.conflict_zone_m)
            if tiles:
                inside.append((v, tiles))
    events = 0
    for i in range(len(inside)):
        vi, ti = inside[i]
        for j in range(i + 1, len(inside)):
            vj, tj = inside[j]
            if vi.approach != vj.approach and conflicts(vi.approach, vi.maneuver,
                                                        vj.approach, vj.maneuver):
                if not ti.isdisjoint(tj):
                    events += 1
    return events


def sample(world: WorldState) -> StepSample:
    active = world.active()
    halting = sum(1 for v in active if v.position_m >= 0 and v.speed_mps < world.sim.stop_speed_mps)
    if not active:
        return StepSample(world.time_s, halting, None, None)
    return StepSample(world.time_s, halting,
                      math.fsum(v.speed_mps for v in active) / len(active),
                      math.fsum(v.current_wait_s for v in active) / len(active))


# -- driver -------------------------------------------------------------------------------


class Simulation:
    """Owns one run: demand stream, controller, optional watchdog and metrics."""

    def __init__(self, sim: SimConfig, demand: DemandScenario, params: Params,
                 controller: Controller, watchdog=None, *, check_invariants: bool = False,
                 track_conflicts: bool = True):
        self.sim = sim
        self.demand = demand
        self.params = params
        self.controller = controller
        self.watchdog = watchdog
        self.world = WorldState(sim)
        self.rng = np.random.default_rng(sim.seed)
        self.check_invariants = check_invariants
        self.track_conflicts = track_conflicts
        self._next = 0

    def _new_id(self) -> int:
        self._next += 1
        return self._next

    def step(self) -> None:
        world = self.world
        born = spawn(self.demand, self.rng, world.time_s, self.sim,
                     self.params.vehicle_types, self._new_id)
        world.generated_total += len(born)
        for veh in born:
            world.pending[veh.approach].append(veh)
        for a in Approach:
            _try_insert(world, a)
        ctrl = self.controller.control(world)
        advisories = ctrl.advisories
        if self.watchdog is not None:
            advisories = self.watchdog.check_and_override(world, advisories)
        step(world, advisories, ctrl.closed)
        if self.track_conflicts:
            world.conflict_events += count_conflicts(world)
        if world.time_s % self.sim.sample_every == 0:
            world.samples.append(sample(world))
        if self.check_invariants:
            world.check_conservation()

    def run(self) -> RunMetrics:
        while self.world.time_s < self.sim.horizon_s:
            self.step()
        return self.metrics()

    def metrics(self) -> RunMetrics:
        world = self.world
        out = summarize(world.completed, world.samples, world.spawned_total, self.sim,
                        self.params.metrics, vc_ratio(self.demand))
        out.conflict_events = world.conflict_events
        if self.watchdog is not None:
            out.watchdog_overrides = self.watchdog.overrides
        stats = getattr(self.controller, "mat_stats", None)
        if stats is not None:
            out.mat = stats()
        return out


__all__ = [
    "Control", "Controller", "Movement", "Simulation", "WorldState", "count_conflicts",
    "follow_cap", "latency_buffer", "movements", "next_speed", "sample", "spawn", "step",
    "stop_distance", "stoppable_speed",
]
