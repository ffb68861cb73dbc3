"""Evaluation metrics: HCM delay and LOS, queues, intent satisfaction, energy."""

from __future__ import annotations

import bisect
import math
import statistics
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Any, Iterable, Optional, Sequence

from .core import PriorityClass, Vehicle, exit_approach

if TYPE_CHECKING:
    from .scenario import DemandScenario, MetricsParams, SimConfig

LOS_THRESHOLDS = (("A", 10.0), ("B", 20.0), ("C", 35.0), ("D", 55.0), ("E", 80.0))
INTENT_WEIGHTS = {"spatial": 0.20, "temporal": 0.40, "priority": 0.20, "energy": 0.20}


def directional_capacity(green_s: float = 30.0, cycle_s: float = 68.0,
                         saturation_flow: float = 1800.0, lanes: int = 1) -> float:
    return green_s / cycle_s * saturation_flow * lanes


def vc_ratio(scenario: "DemandScenario", green_s: float = 30.0, cycle_s: float = 68.0,
             saturation_flow: float = 1800.0, lanes: int = 1) -> float:
    c = directional_capacity(green_s, cycle_s, saturation_flow, lanes)
    q_ns = scenario.ns_straight + scenario.turns
    q_ew = scenario.ew_straight + scenario.turns
    return max(q_ns / c, q_ew / c)


def free_flow_time(trip_length_m: float, v_max: float) -> float:
    return trip_length_m / v_max


def trip_delay(vehicle: Vehicle, sim: "SimConfig") -> float:
    travel = vehicle.arrive_time_s - vehicle.depart_time_s
    return max(0.0, travel - free_flow_time(sim.trip_length(vehicle.length_m), sim.v_max))


def control_delay(completed: Sequence[Vehicle], sim: "SimConfig") -> Optional[float]:
    """Mean HCM control delay over completed trips; None when nothing finished."""
    if not completed:
        return None
    return math.fsum(trip_delay(v, sim) for v in completed) / len(completed)


def los(delay_s: float) -> str:
    if delay_s < 0:
        raise ValueError("delay cannot be negative")
    for grade, upper in LOS_THRESHOLDS:
        if delay_s <= upper:
            return grade
    return "F"


def queue_stats(samples: Sequence[float]) -> tuple[float, float]:
    if not samples:
        return 0.0, 0.0
    return math.fsum(samples) / len(samples), float(max(samples))


# -- energy --------------------------------------------------------------------


def vsp(v: float, a: float) -> float:
    """Vehicle specific power in kW/tonne."""
    return v * (1.1 * a + 0.132) + 3.02e-4 * v ** 3


def fuel_rate(v: float, a: float, params: "MetricsParams", stop_speed: float = 0.1) -> float:
    if v < stop_speed:
        return params.idle_rate_gps
    idx = bisect.bisect_right(params.vsp_bin_edges, vsp(v, a))
    return params.vsp_bin_rates[idx]


def fuel(speeds: Sequence[float], params: "MetricsParams", dt: float = 1.0) -> float:
    """Grams burned over a 1 Hz speed trace; the first entry is the initial state."""
    total = 0.0
    for k in range(1, len(speeds)):
        total += fuel_rate(speeds[k], (speeds[k] - speeds[k - 1]) / dt, params) * dt
    return total


def ke_loss(speeds: Sequence[float], mass_kg: float = 1500.0) -> float:
    """Kinetic energy shed during deceleration steps, in kJ."""
    joules = 0.0
    for prev, cur in zip(speeds, speeds[1:]):
        if cur < prev:
            joules += 0.5 * mass_kg * (prev * prev - cur * cur)
    return joules / 1000.0


def max_deceleration(speeds: Sequence[float]) -> float:
    return max((p - c for p, c in zip(speeds, speeds[1:])), default=0.0)


# -- intent ----------------------------------------------------------------------


def temporal_budget(vc: float, params: "MetricsParams") -> float:
    return params.temporal_budgets_s[bisect.bisect_right(params.temporal_vc_cuts, vc)]


@dataclass(frozen=True)
class IntentContext:
    sim: "SimConfig"
    params: "MetricsParams"
    vc: float

    @property
    def budget_s(self) -> float:
        return temporal_budget(self.vc, self.params)


def near_zone_delay(vehicle: Vehicle, sim: "SimConfig") -> float:
    return max(0.0, vehicle.near_zone_time_s - sim.near_zone_m / sim.v_max)


def intent_components(vehicle: Vehicle, ctx: IntentContext) -> dict[str, int]:
    if vehicle.arrive_time_s is None:
        raise ValueError(f"vehicle {vehicle.id} has not completed its trip")
    expected = exit_approach(vehicle.approach, vehicle.maneuver)
    spatial = int(vehicle.exit_approach == expected)
    temporal = int(trip_delay(vehicle, ctx.sim) <= ctx.budget_s)
    if vehicle.priority is PriorityClass.EMERGENCY:
        priority = int(near_zone_delay(vehicle, ctx.sim) < ctx.params.priority_threshold_emergency_s)
    elif vehicle.priority is PriorityClass.TRANSIT:
        priority = int(near_zone_delay(vehicle, ctx.sim) < ctx.params.priority_threshold_transit_s)
    else:
        priority = 1
    if vehicle.energy_pref > 0:
        comfort = vehicle.decel_max * (1.0 - 0.5 * vehicle.energy_pref)
        energy = int(max_deceleration(vehicle.speeds) <= comfort + 1e-9
                     and vehicle.stop_count <= ctx.params.energy_stop_limit)
    else:
        energy = 1
    return {"spatial": spatial, "temporal": temporal, "priority": priority, "energy": energy}


def intent_score(vehicle: Vehicle, ctx: IntentContext) -> float:
    parts = intent_components(vehicle, ctx)
    return math.fsum(INTENT_WEIGHTS[k] * parts[k] for k in INTENT_WEIGHTS)


def fleet_intent(completed: Sequence[Vehicle], ctx: IntentContext) -> dict[str, Optional[float]]:
    """Fleet percentages.  Priority covers emergency and transit trips only,
    energy only trips with a non-zero preference."""
    if not completed:
        return dict.fromkeys(("overall", "spatial", "temporal", "priority", "energy"))
    scores, sp, tm, pr, en = [], [], [], [], []
    for v in completed:
        parts = intent_components(v, ctx)
        scores.append(math.fsum(INTENT_WEIGHTS[k] * parts[k] for k in INTENT_WEIGHTS))
        sp.append(parts["spatial"])
        tm.append(parts["temporal"])
        if v.priority is not PriorityClass.NORMAL:
            pr.append(parts["priority"])
        if v.energy_pref > 0:
            en.append(parts["energy"])

    def pct(xs: list) -> Optional[float]:
        return 100.0 * math.fsum(xs) / len(xs) if xs else None

    return {"overall": pct(scores), "spatial": pct(sp), "temporal": pct(tm),
            "priority": pct(pr), "energy": pct(en)}


# -- run summary -------------------------------------------------------------------


@dataclass
class StepSample:
    t: int
    halting: int
    mean_speed: Optional[float]
    mean_wait: Optional[float]


@dataclass
class RunMetrics:
    throughput: int
    spawned: int
    mean_control_delay_s: Optional[float]
    mean_wait_s: float
    mean_speed_kmh: Optional[float]
    los_grade: Optional[str]
    avg_queue: float
    peak_queue: float
    intent_overall: Optional[float]
    intent_spatial: Optional[float]
    intent_temporal: Optional[float]
    intent_priority: Optional[float]
    intent_energy: Optional[float]
    fuel_g_per_veh: Optional[float]
    ke_loss_kj_per_veh: Optional[float]
    stops_per_veh: Optional[float]
    watchdog_overrides: int = 0
    conflict_events: int = 0
    mat: Optional[dict[str, Any]] = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def summarize(completed: Sequence[Vehicle], samples: Iterable[StepSample], spawned: int,
              sim: "SimConfig", params: "MetricsParams", vc: float) -> RunMetrics:
    samples = list(samples)
    delay = control_delay(completed, sim)
    avg_q, peak_q = queue_stats([s.halting for s in samples])
    speeds = [s.mean_speed for s in samples if s.mean_speed is not None]
    waits = [s.mean_wait for s in samples if s.mean_wait is not None]
    intent = fleet_intent(completed, IntentContext(sim, params, vc))
    n = len(completed)
    return RunMetrics(
        throughput=n,
        spawned=spawned,
        mean_control_delay_s=delay,
        mean_wait_s=statistics.fmean(waits) if waits else 0.0,
        mean_speed_kmh=3.6 * statistics.fmean(speeds) if speeds else None,
        los_grade=los(delay) if delay is not None else None,
        avg_queue=avg_q,
        peak_queue=peak_q,
        intent_overall=intent["overall"],
        intent_spatial=intent["spatial"],
        intent_temporal=intent["temporal"],
        intent_priority=intent["priority"],
        intent_energy=intent["energy"],
        fuel_g_per_veh=math.fsum(fuel(v.speeds, params) for v in completed) / n if n else None,
        ke_loss_kj_per_veh=math.fsum(ke_loss(v.speeds, params.mass_kg) for v in completed) / n if n else None,
        stops_per_veh=sum(v.stop_count for v in completed) / n if n else None,
    )


METRIC_COLUMNS = [
    "throughput", "mean_control_delay_s", "mean_speed_kmh", "los_grade", "avg_queue",
    "peak_queue", "mean_wait_s", "intent_overall", "intent_spatial", "intent_temporal",
    "intent_priority", "intent_energy", "fuel_g_per_veh", "ke_loss_kj_per_veh",
    "stops_per_veh", "watchdog_overrides",
]

