"""Approach-level right-of-way arbitration and the role-to-speed executor.

The arbitrator works on one ``ApproachState`` per active approach and returns a
``RoleAssignment``.  The executor turns that assignment into per-vehicle
advisory speeds from live distances every step, so a cached assignment still
produces fresh speeds as vehicles move.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from .core import Approach, Maneuver, PriorityClass, Vehicle, conflict_set, conflicts
from .scenario import LidsaParams, SimConfig


class Role(str, enum.Enum):
    CLEAR = "CLEAR"
    YIELD = "YIELD"
    SHARE = "SHARE"
    FOLLOW = "FOLLOW"

    def __str__(self) -> str:
        return self.value


class Source(str, enum.Enum):
    LLM = "LLM"
    MAT = "MAT"
    FALLBACK = "FALLBACK"
    RULE = "RULE"


@dataclass(frozen=True)
class ApproachState:
    approach: Approach
    leader_maneuver: Maneuver
    leader_distance_m: float
    leader_speed: float
    queue_len: int
    mean_speed: float
    mean_stop_delay_s: float
    dominant_priority: PriorityClass
    leader_wait_s: float
    mean_energy_pref: float
    leader_occupancy: int = 1
    leader_id: Optional[int] = None


@dataclass(frozen=True)
class RoleAssignment:
    roles: Mapping[Approach, Role]
    yield_target: Mapping[Approach, Approach] = field(default_factory=dict)
    share_pair: Optional[tuple[Approach, Approach]] = None
    issued_at_s: int = 0
    source: Source = Source.RULE

    def same_roles(self, other: "RoleAssignment") -> bool:
        """Equality on the decision itself, ignoring when and how it was issued."""
        return (dict(self.roles) == dict(other.roles)
                and dict(self.yield_target) == dict(other.yield_target)
                and self.share_pair == other.share_pair)

    def holder(self) -> Optional[Approach]:
        """Right-of-way holder: the first yield target in N, E, S, W order."""
        for a in Approach:
            if a in self.yield_target:
                return self.yield_target[a]
        return None

    def restamp(self, t: int, source: Source) -> "RoleAssignment":
        return RoleAssignment(dict(self.roles), dict(self.yield_target), self.share_pair, t, source)


def assignment_errors(assignment: RoleAssignment,
                      active: Mapping[Approach, Maneuver]) -> list[str]:
    """Invariant violations of ``assignment`` against the active movements."""
    errs = []
    roles = assignment.roles
    for a, role in roles.items():
        if role is Role.FOLLOW:
            errs.append(f"{a}: FOLLOW is reserved for the executor")
        if role is Role.YIELD:
            target = assignment.yield_target.get(a)
            if target is None:
                errs.append(f"{a}: YIELD without a target")
            elif target == a or roles.get(target) not in (Role.CLEAR, Role.SHARE):
                errs.append(f"{a}: yield target {target} holds no right of way")
    sharing = sorted(a for a, r in roles.items() if r is Role.SHARE)
    if sharing:
        pair = assignment.share_pair
        if pair is None or len(sharing) != 2 or set(pair) != set(sharing):
            errs.append(f"SHARE roles {sharing} do not match share_pair {pair}")
    elif assignment.share_pair is not None:
        errs.append("share_pair given but nobody holds SHARE")
    clear = [a for a, r in roles.items() if r is Role.CLEAR and a in active]
    for i, a in enumerate(clear):
        for b in clear[i + 1:]:
            if conflicts(a, active[a], b, active[b]):
                errs.append(f"conflicting approaches {a} and {b} are both CLEAR")
    return errs


# -- pressure and sharing ----------------------------------------------------------


def effective_delay(state: ApproachState, alpha_slow: float, v_max: float) -> float:
    slow = max(0.0, (v_max - state.mean_speed) / v_max)
    return state.mean_stop_delay_s + alpha_slow * slow


def pressure(state: ApproachState, alpha_slow: float, v_max: float) -> float:
    return state.queue_len * effective_delay(state, alpha_slow, v_max)


def share_condition(p_a: float, p_b: float, theta_p: float, delta_p: float) -> bool:
    return p_a > theta_p and p_b > theta_p and abs(p_a - p_b) < delta_p


# -- arbitration -----------------------------------------------------------------------


def preempt(emergency_approach: Approach, active: Mapping[Approach, Maneuver],
            t: int = 0) -> RoleAssignment:
    """Emergency approach goes first; only its conflict set yields."""
    if emergency_approach not in active:
        raise KeyError(f"emergency approach {emergency_approach} is not active")
    losers = conflict_set(emergency_approach, active)
    roles = {a: (Role.YIELD if a in losers else Role.CLEAR) for a in sorted(active)}
    targets = {a: emergency_approach for a in sorted(losers)}
    return RoleAssignment(roles, targets, None, t, Source.RULE)


def _rank_key(state: ApproachState, p: float) -> tuple:
    return (-int(state.dominant_priority), -state.leader_wait_s * state.leader_occupancy,
            -p, int(state.approach))


def _greedy(order: Iterable[Approach], active: Mapping[Approach, Maneuver],
            granted: list[Approach], roles: dict, targets: dict) -> None:
    """CLEAR unless blocked by an approach already holding right of way."""
    for a in order:
        blockers = [g for g in granted if conflicts(a, active[a], g, active[g])]
        if blockers:
            roles[a] = Role.YIELD
            targets[a] = blockers[0]
        else:
            roles[a] = Role.CLEAR
            granted.append(a)


def rule_arbitrate(states: Mapping[Approach, ApproachState], params: LidsaParams,
                   v_max: float = 13.89, t: int = 0) -> RoleAssignment:
    if not states:
        raise ValueError("rule_arbitrate needs at least one active approach")
    active = {a: s.leader_maneuver for a, s in states.items()}
    press = {a: pressure(s, params.alpha_slow, v_max) for a, s in states.items()}
    ranked = sorted(states, key=lambda a: _rank_key(states[a], press[a]))

    emergency = [a for a in ranked if states[a].dominant_priority is PriorityClass.EMERGENCY]
    if emergency:
        e = emergency[0]
        base = preempt(e, active, t)
        roles = dict(base.roles)
        targets = dict(base.yield_target)
        # Pre-emption leaves the non-conflicting remainder CLEAR; they may still
        # conflict among themselves (e.g. when the emergency vehicle turns right).
        rest = [a for a in ranked if a != e and roles[a] is Role.CLEAR]
        _greedy(rest, active, [e], roles, targets)
        return RoleAssignment(dict(sorted(roles.items())), dict(sorted(targets.items())),
                              None, t, Source.RULE)

    roles: dict[Approach, Role] = {}
    targets: dict[Approach, Approach] = {}
    granted: list[Approach] = []
    share = None
    best = -math.inf
    for i, a in enumerate(sorted(states)):
        for b in sorted(states)[i + 1:]:
            if not conflicts(a, active[a], b, active[b]):
                continue
            if share_condition(press[a], press[b], params.theta_p, params.delta_p):
                total = press[a] + press[b]
                if total > best:
                    best, share = total, (a, b)
    if share is not None:
        for a in share:
            roles[a] = Role.SHARE
            granted.append(a)
    _greedy([a for a in ranked if a not in roles], active, granted, roles, targets)
    return RoleAssignment(dict(sorted(roles.items())), dict(sorted(targets.items())),
                          share, t, Source.RULE)


def all_clear(active: Iterable[Approach], t: int = 0,
              source: Source = Source.FALLBACK) -> RoleAssignment:
    return RoleAssignment({a: Role.CLEAR for a in sorted(active)}, {}, None, t, source)


# -- executor ------------------------------------------------------------------------------


def traversal_time(maneuver: Maneuver, v_ref: float, zone_side: float = 12.0) -> float:
    length = zone_side if maneuver is Maneuver.STRAIGHT else zone_side * math.pi / 2.0
    return length / v_ref


def yield_speed(d_i: float, d_star: float, v_ref: float, tau_trav: float, tau_safe: float,
                v_min: float, v_max: float) -> float:
    t_clear = d_star / v_ref + tau_trav + tau_safe
    raw = d_i / t_clear if t_clear > 0 else v_max
    if raw < v_min:
        return 0.0
    return min(raw, v_max)


def share_speed(p_a: float, p_b: float, eta: float, v_max: float, v_min: float = 0.0) -> float:
    total = p_a + p_b
    ratio = p_a / total if total > 0 else 0.5
    v = eta * v_max * ratio
    return 0.0 if v < v_min else v


def follow_speed(d_i: float, d_lead: float, v_lead: float, delta_gap_s: float,
                 v_max: float) -> float:
    if v_lead <= 0:
        return 0.0
    return min(v_max, max(0.0, d_i / (d_lead / v_lead + delta_gap_s)))


def _share_speed_of(a: Approach, assignment: RoleAssignment,
                    states: Mapping[Approach, ApproachState], cfg: SimConfig,
                    params: LidsaParams) -> float:
    pair = assignment.share_pair
    if pair is None or a not in pair:
        raise ValueError(f"{a} holds SHARE but is not in the share pair")
    b = pair[1] if pair[0] == a else pair[0]
    p_a = pressure(states[a], params.alpha_slow, cfg.v_max) if a in states else 0.0
    p_b = pressure(states[b], params.alpha_slow, cfg.v_max) if b in states else 0.0
    return share_speed(p_a, p_b, params.eta, cfg.v_max, cfg.v_min)


def leader_speed(approach: Approach, d: float, assignment: RoleAssignment,
                 states: Mapping[Approach, ApproachState], cfg: SimConfig,
                 params: LidsaParams) -> float:
    """Role advisory for the leader of `approach` standing at distance d."""
    if d < 0 or d > cfg.near_zone_m:
        return cfg.v_max
    role = assignment.roles.get(approach, Role.CLEAR)
    if role is Role.CLEAR:
        return cfg.v_max
    if role is Role.SHARE:
        return _share_speed_of(approach, assignment, states, cfg, params)
    if role is Role.YIELD:
        target = assignment.yield_target.get(approach)
        if target is None:
            raise ValueError(f"YIELD on {approach} has no yield target")
        winner = states.get(target)
        v_ref = cfg.v_max
        if assignment.roles.get(target) is Role.SHARE:
            v_ref = _share_speed_of(target, assignment, states, cfg, params) or cfg.v_max
        d_star = winner.leader_distance_m if winner is not None else 0.0
        m_star = winner.leader_maneuver if winner is not None else Maneuver.STRAIGHT
        return yield_speed(d, d_star, v_ref, traversal_time(m_star, v_ref, cfg.conflict_zone_m),
                           params.tau_safe_s, cfg.v_min, cfg.v_max)
    raise ValueError(f"role {role} cannot be executed for an approach leader")


def role_to_speed(vehicle: Vehicle, assignment: RoleAssignment,
                  states: Mapping[Approach, ApproachState], cfg: SimConfig,
                  params: LidsaParams) -> float:
    """Advisory for one vehicle.  Roles apply only inside the near zone."""
    d = vehicle.position_m
    state = states.get(vehicle.approach)
    if d < 0 or d > cfg.near_zone_m or state is None:
        return cfg.v_max
    if state.leader_id is not None and vehicle.id != state.leader_id:
        if params.follow_reference == "advisory":
            v_lead = leader_speed(vehicle.approach, state.leader_distance_m, assignment,
                                  states, cfg, params)
        else:
            v_lead = state.leader_speed
        return follow_speed(d, state.leader_distance_m, v_lead, params.delta_gap_s, cfg.v_max)
    return leader_speed(vehicle.approach, d, assignment, states, cfg, params)


# -- state extraction ---------------------------------------------------------------------


def approach_state(approach: Approach, vehicles: list[Vehicle]) -> Optional[ApproachState]:
    """Snapshot of one approach from its in-horizon vehicles, nearest first."""
    if not vehicles:
        return None
    lead = vehicles[0]
    n = len(vehicles)
    return ApproachState(
        approach=approach,
        leader_maneuver=lead.maneuver,
        leader_distance_m=lead.position_m,
        leader_speed=lead.speed_mps,
        queue_len=n,
        mean_speed=math.fsum(v.speed_mps for v in vehicles) / n,
        mean_stop_delay_s=math.fsum(v.cumulative_wait_s for v in vehicles) / n,
        dominant_priority=max(v.priority for v in vehicles),
        leader_wait_s=lead.cumulative_wait_s,
        mean_energy_pref=math.fsum(v.energy_pref for v in vehicles) / n,
        leader_occupancy=lead.occupancy,
        leader_id=lead.id,
    )


def build_states(world, cfg: SimConfig) -> dict[Approach, ApproachState]:
    out = {}
    for a in Approach:
        st = approach_state(a, world.inbound(a, cfg.advisory_horizon_m))
        if st is not None:
            out[a] = st
    return out
