"""The LIDSA controller: request triggers, memo table, async backend, executor."""

from __future__ import annotations

import logging
from typing import Optional

from .arbitration import (ApproachState, RoleAssignment, Role, Source, all_clear,
                          build_states, role_to_speed)
from .backends import ArbitrationRequest, Backend, RuleBackend, Status, Ticket
from .core import Approach
from .engine import Control, WorldState
from .mat import ConflictSignature, MemoTable, signature
from .scenario import LidsaParams, SimConfig

log = logging.getLogger(__name__)


class LidsaController:
    """Per-step control loop.

    A lookup is made when the cadence timer fires, when a new leader appears on
    any approach, or when an approach's dominant priority class changes (so an
    emergency vehicle behind the leader pre-empts at once).  Hits apply at once.
    Misses go to the backend; while a call is outstanding the assignment in
    effect stays, and approaches it does not cover run provisionally CLEAR.
    A failed or timed-out call falls back to CLEAR for every active approach.
    """

    name = "lidsa"

    def __init__(self, sim: SimConfig, params: LidsaParams = LidsaParams(),
                 backend: Optional[Backend] = None):
        self.sim = sim
        self.params = params
        self.backend = backend or RuleBackend(params.timeout_s)
        self.mat = MemoTable()
        self.assignment: Optional[RoleAssignment] = None
        self.pending: Optional[tuple[Ticket, ConflictSignature]] = None
        self.coalesced = 0
        self.rationales: list[tuple[int, str]] = []
        self._last_request_t: Optional[int] = None
        self._last_leaders: frozenset = frozenset()
        self._last_classes: dict = {}

    # -- helpers -----------------------------------------------------------------

    def _holder(self) -> Optional[Approach]:
        return self.assignment.holder() if self.assignment is not None else None

    def _submit(self, states, sig: ConflictSignature, t: int) -> None:
        if self.pending is not None:
            self.coalesced += 1
            return
        req = ArbitrationRequest(states, self._holder(), t, self.params, self.sim.v_max)
        self.mat.stats.llm_calls += 1
        self.pending = (self.backend.submit(req, t), sig)

    def _poll(self, states, t: int) -> bool:
        """Resolve the outstanding call if it finished; True when a result landed."""
        if self.pending is None:
            return False
        ticket, sig = self.pending
        res = self.backend.poll(ticket, t)
        if res.status is Status.PENDING:
            return False
        self.pending = None
        if res.latency_s is not None:
            self.mat.stats.latencies_s.append(res.latency_s)
        if res.status is Status.READY:
            self.mat.store(sig, res.response.assignment)
            self.assignment = res.response.assignment
            if res.response.rationale:
                self.rationales.append((t, res.response.rationale))
        else:
            log.info("t=%s arbitration failed (%s); CLEAR fallback", t, res.error)
            self.mat.stats.fallbacks += 1
            self.assignment = all_clear(states, t)
        return True

    def _request(self, states, sig: ConflictSignature, t: int) -> None:
        self._last_request_t = t
        hit = self.mat.lookup(sig)
        if hit is not None:
            self.assignment = hit.restamp(t, Source.MAT)
            return
        self._submit(states, sig, t)
        self._poll(states, t)  # synchronous backends answer within the step

    def _effective(self, states) -> RoleAssignment:
        base = self.assignment
        roles = dict(base.roles) if base is not None else {}
        targets = dict(base.yield_target) if base is not None else {}
        for a in states:
            roles.setdefault(a, Role.CLEAR)
        return RoleAssignment(roles, targets, base.share_pair if base else None,
                              base.issued_at_s if base else 0,
                              base.source if base else Source.FALLBACK)

    # -- controller protocol ----------------------------------------------------------

    def control(self, world: WorldState) -> Control:
        t = world.time_s
        states: dict[Approach, ApproachState] = build_states(world, self.sim)
        if not states:
            self._last_leaders = frozenset()
            self._last_classes = {}
            return Control()
        self._poll(states, t)
        leaders = frozenset(s.leader_id for s in states.values())
        classes = {a: s.dominant_priority for a, s in states.items()}
        due = self._last_request_t is None or t - self._last_request_t >= self.params.cadence_s
        new_leader = not leaders <= self._last_leaders
        escalated = any(self._last_classes.get(a) != pc for a, pc in classes.items())
        if due or new_leader or escalated:
            sig = signature(states, self._holder(), self.params, self.sim.v_max)
            self._request(states, sig, t)
        self._last_leaders = leaders
        self._last_classes = classes

        effective = self._effective(states)
        adv = {}
        for a in states:
            for v in world.inbound(a, self.sim.near_zone_m):
                adv[v.id] = role_to_speed(v, effective, states, self.sim, self.params)
        return Control(adv)

    def mat_stats(self) -> dict:
        out = self.mat.stats.to_dict()
        out["coalesced"] = self.coalesced
        return out

    def close(self) -> None:
        self.backend.close()
