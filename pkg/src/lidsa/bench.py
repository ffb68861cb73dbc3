"""Arbitration benchmark: fixture suite, per-call scoring and the composite score."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any, Optional

from .arbitration import ApproachState, RoleAssignment, Role
from .backends import ArbitrationRequest, Backend, SchemaError, Status, parse_response
from .core import Approach, Maneuver, PriorityClass, conflicts
from .scenario import LidsaParams

LAMBDA0_MS = 5000.0
WEIGHTS = {"latency": 0.40, "logic": 0.30, "safety": 0.20, "json": 0.10}
DISQUALIFY_BELOW = 0.50
DETERMINISM_ID = 20
POLL_TICK_S = 0.05


def latency_score(mean_ms: float, lambda0_ms: float = LAMBDA0_MS) -> float:
    if mean_ms < 0:
        raise ValueError("mean latency must be non-negative")
    return max(0.0, 1.0 - mean_ms / lambda0_ms)


def composite(s_logic: float, s_json: float, lat: float, s_safety: float) -> float:
    for x in (s_logic, s_json, lat, s_safety):
        if not 0.0 <= x <= 1.0:
            raise ValueError(f"sub-score {x} outside [0, 1]")
    return math.fsum([WEIGHTS["latency"] * lat, WEIGHTS["logic"] * s_logic,
                      WEIGHTS["safety"] * s_safety, WEIGHTS["json"] * s_json])


def is_disqualified(s_logic: float) -> bool:
    return s_logic < DISQUALIFY_BELOW


# -- fixtures ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchScenario:
    id: int
    group: str
    focus: str
    states: dict
    row_holder: Optional[Approach]
    expected: RoleAssignment

    @property
    def runs(self) -> int:
        return 10 if self.id == DETERMINISM_ID else 3

    @property
    def active(self) -> dict[Approach, Maneuver]:
        return {a: s.leader_maneuver for a, s in self.states.items()}


def _state(a: Approach, raw: dict) -> ApproachState:
    return ApproachState(
        approach=a,
        leader_maneuver=Maneuver(raw["leader_maneuver"]),
        leader_distance_m=float(raw["leader_distance_m"]),
        leader_speed=float(raw["leader_speed"]),
        queue_len=int(raw["queue_len"]),
        mean_speed=float(raw["mean_speed"]),
        mean_stop_delay_s=float(raw["mean_stop_delay_s"]),
        dominant_priority=PriorityClass[raw["dominant_priority"]],
        leader_wait_s=float(raw["leader_wait_s"]),
        mean_energy_pref=float(raw["mean_energy_pref"]),
        leader_occupancy=int(raw.get("leader_occupancy", 1)),
    )


def _expected(raw: dict) -> RoleAssignment:
    roles = {Approach[a]: Role(r) for a, r in raw["roles"].items()}
    targets = {Approach[a]: Approach[b] for a, b in raw.get("yield_to", {}).items()}
    pair = raw.get("share_pair")
    if pair is not None:
        pair = tuple(sorted(Approach[x] for x in pair))
    return RoleAssignment(dict(sorted(roles.items())), dict(sorted(targets.items())), pair)


@lru_cache(maxsize=1)
def load_suite() -> tuple[BenchScenario, ...]:
    text = resources.files("lidsa.data").joinpath("bench_scenarios.json").read_text()
    out = []
    for raw in json.loads(text)["scenarios"]:
        states = {Approach[a]: _state(Approach[a], s) for a, s in raw["states"].items()}
        holder = raw.get("row_holder")
        out.append(BenchScenario(raw["id"], raw["group"], raw["focus"],
                                 dict(sorted(states.items())),
                                 Approach[holder] if holder else None,
                                 _expected(raw["expected"])))
    return tuple(sorted(out, key=lambda s: s.id))


def total_calls(suite=None) -> int:
    return sum(s.runs for s in (suite or load_suite()))


# -- scoring ------------------------------------------------------------------------------


def clear_clear(assignment: RoleAssignment, active: dict[Approach, Maneuver]) -> bool:
    """True when two geometrically conflicting approaches are both CLEAR."""
    clear = [a for a, r in assignment.roles.items() if r is Role.CLEAR and a in active]
    return any(conflicts(a, active[a], b, active[b])
               for i, a in enumerate(clear) for b in clear[i + 1:])


@dataclass
class CallRecord:
    scenario_id: int
    run: int
    latency_ms: float
    parsed: bool
    correct: bool
    safe: Optional[bool]
    error: Optional[str] = None
    decision: Optional[dict] = None


@dataclass
class BenchResult:
    backend: str
    calls: int
    logic_accuracy: float
    json_parse_rate: float
    role_safety: float
    mean_latency_ms: float
    p95_latency_ms: float
    calls_over_5000ms: int
    latency_score: float
    composite: float
    disqualified: bool
    determinism: tuple[int, int]
    by_group: dict[str, float] = field(default_factory=dict)
    records: list[CallRecord] = field(default_factory=list)

    def summary(self) -> dict[str, Any]:
        out = asdict(self)
        out.pop("records")
        out["determinism"] = list(self.determinism)
        return out


def _call(backend: Backend, request: ArbitrationRequest):
    """Submit and poll to completion.  Returns (PollResult, latency in ms)."""
    start = time.monotonic()
    ticket = backend.submit(request, 0.0)
    now = 0.0
    while True:
        res = backend.poll(ticket, now)
        if res.status is not Status.PENDING:
            break
        if backend.realtime:
            time.sleep(POLL_TICK_S)
        now += POLL_TICK_S
    wall = time.monotonic() - start
    declared = res.latency_s if res.latency_s is not None else 0.0
    return res, 1000.0 * max(wall, declared)


def _decision(a: RoleAssignment) -> dict:
    return {"roles": {k.name: v.value for k, v in a.roles.items()},
            "yield_to": {k.name: v.name for k, v in a.yield_target.items()},
            "share_pair": [x.name for x in a.share_pair] if a.share_pair else None}


def score_call(sc: BenchScenario, run: int, res, latency_ms: float) -> CallRecord:
    if res.raw is None:
        return CallRecord(sc.id, run, latency_ms, False, False, None, res.error or "no output")
    try:
        assignment = parse_response(res.raw, sc.active).assignment
    except SchemaError as exc:
        return CallRecord(sc.id, run, latency_ms, False, False, None, str(exc))
    return CallRecord(sc.id, run, latency_ms, True, assignment.same_roles(sc.expected),
                      not clear_clear(assignment, sc.active), res.error,
                      _decision(assignment))


def _p95(xs: list[float]) -> float:
    if not xs:
        return 0.0
    s = sorted(xs)
    return s[max(0, math.ceil(0.95 * len(s)) - 1)]


def run_suite(backend: Backend, params: LidsaParams = LidsaParams(),
              v_max: float = 13.89, suite=None) -> BenchResult:
    suite = suite or load_suite()
    records: list[CallRecord] = []
    for sc in suite:
        for run in range(sc.runs):
            req = ArbitrationRequest(sc.states, sc.row_holder, 0, params, v_max)
            res, lat = _call(backend, req)
            records.append(score_call(sc, run, res, lat))
    n = len(records)
    parsed = [r for r in records if r.parsed]
    s_logic = sum(r.correct for r in records) / n
    s_json = len(parsed) / n
    s_safety = (sum(bool(r.safe) for r in parsed) / len(parsed)) if parsed else 0.0
    lats = [r.latency_ms for r in records]
    mean_ms = math.fsum(lats) / n
    lat = latency_score(mean_ms)

    det = [r for r in records if r.scenario_id == DETERMINISM_ID]
    first = det[0].decision if det else None
    same = sum(1 for r in det if r.parsed and r.decision == first) if first else 0

    groups: dict[str, list[bool]] = {}
    by_id = {s.id: s.group for s in suite}
    for r in records:
        groups.setdefault(by_id[r.scenario_id], []).append(r.correct)
    return BenchResult(
        backend=getattr(backend, "name", type(backend).__name__),
        calls=n,
        logic_accuracy=s_logic,
        json_parse_rate=s_json,
        role_safety=s_safety,
        mean_latency_ms=mean_ms,
        p95_latency_ms=_p95(lats),
        calls_over_5000ms=sum(1 for x in lats if x > LAMBDA0_MS),
        latency_score=lat,
        composite=composite(s_logic, s_json, lat, s_safety),
        disqualified=is_disqualified(s_logic),
        determinism=(same, len(det)),
        by_group={g: sum(v) / len(v) for g, v in sorted(groups.items())},
        records=records,
    )
