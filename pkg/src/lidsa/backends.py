"""Arbitrator backends behind one submit/poll interface.

``RuleBackend`` answers synchronously with the reference rules,
``ScriptedBackend`` replays canned text with a declared latency (tests and
benchmarks), and ``HttpBackend`` posts the prompt to a JSON endpoint from a
single worker thread so the control loop never blocks.

Every backend returns raw text; ``validate`` is the single gate between that
text and the executor.
"""

from __future__ import annotations

import enum
import itertools
import json
import logging
import os
import time
import urllib.request
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Callable, Mapping, Optional, Sequence, Union

from .arbitration import (ApproachState, RoleAssignment, Role, Source, assignment_errors,
                          pressure, rule_arbitrate)
from .core import Approach, Maneuver, PriorityClass
from .scenario import LidsaParams, LlmParams

log = logging.getLogger(__name__)

PROMPT_VERSION = "v1"
RATIONALE_MAX_BYTES = 2048


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class RequestEntry:
    approach: Approach
    maneuver: Maneuver
    priority: PriorityClass
    leader_wait_s: float
    queue_len: int
    pressure: float
    mean_energy_pref: float


@dataclass(frozen=True)
class ArbitrationRequest:
    states: Mapping[Approach, ApproachState]
    row_holder: Optional[Approach] = None
    issued_at_s: int = 0
    params: LidsaParams = field(default_factory=LidsaParams)
    v_max: float = 13.89

    def __post_init__(self) -> None:
        if not self.states:
            raise ValueError("a request needs at least one active approach")
        if len(self.states) > 4:
            raise ValueError("at most four approach entries")

    @property
    def entries(self) -> list[RequestEntry]:
        out = []
        for a in sorted(self.states):
            st = self.states[a]
            out.append(RequestEntry(a, st.leader_maneuver, st.dominant_priority,
                                    st.leader_wait_s, st.queue_len,
                                    pressure(st, self.params.alpha_slow, self.v_max),
                                    st.mean_energy_pref))
        return out

    @property
    def active(self) -> dict[Approach, Maneuver]:
        return {a: s.leader_maneuver for a, s in self.states.items()}


@dataclass(frozen=True)
class ArbitrationResponse:
    assignment: RoleAssignment
    rationale: str = ""


# -- prompt ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def prompt_template(version: str = PROMPT_VERSION) -> str:
    return resources.files("lidsa.assets").joinpath(f"prompt_{version}.txt").read_text()


def build_prompt(request: ArbitrationRequest) -> str:
    lines = []
    for e in request.entries:
        lines.append(json.dumps({
            "approach": e.approach.name, "maneuver": e.maneuver.value,
            "priority": e.priority.name, "leader_wait_s": round(e.leader_wait_s, 1),
            "queue_len": e.queue_len, "pressure": round(e.pressure, 1),
            "energy_pref": round(e.mean_energy_pref, 2),
        }, sort_keys=True))
    holder = request.row_holder.name if request.row_holder is not None else "none"
    return prompt_template().format(holder=holder, time_s=request.issued_at_s,
                                    count=len(lines), entries="\n".join(lines))


# -- response (de)serialization ----------------------------------------------------------


def response_json(assignment: RoleAssignment, rationale: str = "") -> str:
    return json.dumps({
        "roles": {a.name: r.value for a, r in sorted(assignment.roles.items())},
        "yield_to": {a.name: b.name for a, b in sorted(assignment.yield_target.items())},
        "share_pair": [a.name for a in assignment.share_pair] if assignment.share_pair else None,
        "rationale": rationale,
    }, sort_keys=True)


def _strip_fences(text: str) -> str:
    text = text.strip()
    if text.startswith("```"):
        text = text.split("\n", 1)[1] if "\n" in text else ""
        if text.rstrip().endswith("```"):
            text = text.rstrip()[:-3]
    return text


def _approach(token, where: str) -> Approach:
    try:
        return Approach[token]
    except (KeyError, TypeError):
        raise SchemaError(f"{where}: unknown approach {token!r}") from None


def parse_response(raw: Union[str, bytes], active: Mapping[Approach, Maneuver],
                   t: int = 0, source: Source = Source.LLM) -> ArbitrationResponse:
    """Schema-level parse of a backend answer, without the role-safety checks."""
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8", errors="replace")
    try:
        doc = json.loads(_strip_fences(raw))
    except (json.JSONDecodeError, TypeError) as exc:
        raise SchemaError(f"not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("roles"), dict):
        raise SchemaError("expected an object with a 'roles' mapping")
    roles = {}
    for key, token in doc["roles"].items():
        a = _approach(key, "roles")
        if token == Role.FOLLOW.value:
            raise SchemaError(f"roles: FOLLOW is not an arbitration role ({key})")
        if token not in (Role.CLEAR.value, Role.YIELD.value, Role.SHARE.value):
            raise SchemaError(f"roles: unknown role {token!r} for {key}")
        roles[a] = Role(token)
    if set(roles) != set(active):
        raise SchemaError(f"roles cover {sorted(x.name for x in roles)}, "
                          f"active approaches are {sorted(x.name for x in active)}")
    yield_raw = doc.get("yield_to") or {}
    if not isinstance(yield_raw, dict):
        raise SchemaError("yield_to must be a mapping")
    targets = {_approach(k, "yield_to"): _approach(v, "yield_to") for k, v in yield_raw.items()}
    targets = {a: b for a, b in targets.items() if roles.get(a) is Role.YIELD}
    pair_raw = doc.get("share_pair")
    pair = None
    if pair_raw is not None:
        if not isinstance(pair_raw, list) or len(pair_raw) != 2:
            raise SchemaError("share_pair must be null or a two-element list")
        pair = tuple(sorted((_approach(pair_raw[0], "share_pair"),
                             _approach(pair_raw[1], "share_pair"))))
    assignment = RoleAssignment(dict(sorted(roles.items())), dict(sorted(targets.items())),
                                pair, t, source)
    rationale = doc.get("rationale") or ""
    if not isinstance(rationale, str):
        rationale = str(rationale)
    rationale = rationale.encode("utf-8")[:RATIONALE_MAX_BYTES].decode("utf-8", errors="ignore")
    return ArbitrationResponse(assignment, rationale)


def validate(raw: Union[str, bytes], active: Mapping[Approach, Maneuver],
             t: int = 0, source: Source = Source.LLM) -> ArbitrationResponse:
    """Parse and check a backend answer; raise SchemaError on any defect."""
    resp = parse_response(raw, active, t, source)
    errs = assignment_errors(resp.assignment, active)
    if errs:
        raise SchemaError("; ".join(errs))
    return resp


# -- tickets --------------------------------------------------------------------------------


class Status(enum.Enum):
    PENDING = "pending"
    READY = "ready"
    FAILED = "failed"


@dataclass
class Ticket:
    id: int
    request: ArbitrationRequest
    submitted_at_s: float
    wall_start: float = 0.0
    payload: object = None


@dataclass(frozen=True)
class PollResult:
    status: Status
    response: Optional[ArbitrationResponse] = None
    error: Optional[str] = None
    latency_s: Optional[float] = None
    raw: Optional[str] = None


class Backend:
    """Base class; subclasses produce raw text for a request."""

    name = "base"
    # True when poll() measures time on the wall clock rather than from now_s.
    realtime = False

    def __init__(self, timeout_s: float = 30.0):
        self.timeout_s = timeout_s
        self._ids = itertools.count(1)

    def submit(self, request: ArbitrationRequest, now_s: float) -> Ticket:
        raise NotImplementedError

    def poll(self, ticket: Ticket, now_s: float) -> PollResult:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def _finish(self, ticket: Ticket, raw: str, latency_s: float, source: Source) -> PollResult:
        try:
            resp = validate(raw, ticket.request.active, int(ticket.submitted_at_s), source)
        except SchemaError as exc:
            return PollResult(Status.FAILED, error=str(exc), latency_s=latency_s, raw=raw)
        return PollResult(Status.READY, resp, latency_s=latency_s, raw=raw)


class RuleBackend(Backend):
    name = "rule"

    def submit(self, request: ArbitrationRequest, now_s: float) -> Ticket:
        assignment = rule_arbitrate(request.states, request.params, request.v_max,
                                    int(now_s))
        return Ticket(next(self._ids), request, now_s,
                      payload=response_json(assignment, "reference rules"))

    def poll(self, ticket: Ticket, now_s: float) -> PollResult:
        # Reported latency is simulated time, which keeps run records reproducible.
        return self._finish(ticket, ticket.payload, 0.0, Source.RULE)


Responder = Union[str, Sequence[str], Callable[[ArbitrationRequest], str]]


def all_clear_responder(request: ArbitrationRequest) -> str:
    """Adversarial answer: every active approach CLEAR, conflicts or not."""
    return json.dumps({"roles": {a.name: "CLEAR" for a in sorted(request.states)},
                       "yield_to": {}, "share_pair": None, "rationale": ""})


class ScriptedBackend(Backend):
    """Canned responses with a declared per-call latency in seconds."""

    name = "scripted"

    def __init__(self, responses: Responder, latency_s: Union[float, Sequence[float]] = 0.0,
                 timeout_s: float = 30.0):
        super().__init__(timeout_s)
        self._responses = responses
        self._latency = latency_s
        self.calls = 0

    def _next_text(self, request: ArbitrationRequest) -> str:
        r = self._responses
        if callable(r):
            return r(request)
        if isinstance(r, str):
            return r
        return r[self.calls % len(r)]

    def _next_latency(self) -> float:
        lat = self._latency
        if isinstance(lat, (int, float)):
            return float(lat)
        return float(lat[self.calls % len(lat)])

    def submit(self, request: ArbitrationRequest, now_s: float) -> Ticket:
        payload = (self._next_text(request), self._next_latency())
        self.calls += 1
        return Ticket(next(self._ids), request, now_s, payload=payload)

    def poll(self, ticket: Ticket, now_s: float) -> PollResult:
        text, latency = ticket.payload
        waited = now_s - ticket.submitted_at_s
        if latency > self.timeout_s and waited >= self.timeout_s:
            return PollResult(Status.FAILED, error="timeout", latency_s=self.timeout_s)
        if waited < latency:
            return PollResult(Status.PENDING)
        return self._finish(ticket, text, latency, Source.LLM)


class HttpBackend(Backend):
    """POST {prompt, model, temperature, seed, max_tokens}; expect {text}.

    Latency and the timeout are measured on the wall clock here, since the
    remote call runs in real time while the kernel steps as fast as it can.
    """

    name = "http"
    realtime = True

    def __init__(self, llm: LlmParams, opener: Optional[Callable] = None):
        super().__init__(llm.timeout_s)
        self.llm = llm
        self._pool = ThreadPoolExecutor(max_workers=1, thread_name_prefix="arbiter")
        self._open = opener or urllib.request.urlopen

    def _call(self, prompt: str) -> str:
        body = json.dumps({"prompt": prompt, "model": self.llm.model,
                           "temperature": self.llm.temperature, "seed": self.llm.seed,
                           "max_tokens": self.llm.max_tokens}).encode()
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.llm.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        req = urllib.request.Request(self.llm.endpoint, data=body, headers=headers,
                                     method="POST")
        with self._open(req, timeout=self.llm.timeout_s) as resp:
            doc = json.loads(resp.read().decode("utf-8"))
        if not isinstance(doc, dict) or not isinstance(doc.get("text"), str):
            raise SchemaError("endpoint reply lacks a 'text' field")
        return doc["text"]

    def submit(self, request: ArbitrationRequest, now_s: float) -> Ticket:
        fut: Future = self._pool.submit(self._call, build_prompt(request))
        return Ticket(next(self._ids), request, now_s, wall_start=time.monotonic(), payload=fut)

    def poll(self, ticket: Ticket, now_s: float) -> PollResult:
        fut: Future = ticket.payload
        elapsed = time.monotonic() - ticket.wall_start
        if not fut.done():
            if elapsed >= self.timeout_s:
                fut.cancel()
                return PollResult(Status.FAILED, error="timeout", latency_s=elapsed)
            return PollResult(Status.PENDING)
        exc = fut.exception()
        if exc is not None:
            log.warning("arbitration call failed: %s", exc)
            return PollResult(Status.FAILED, error=str(exc), latency_s=elapsed)
        return self._finish(ticket, fut.result(), elapsed, Source.LLM)

    def close(self) -> None:
        self._pool.shutdown(wait=False, cancel_futures=True)


def make_backend(name: str, llm: Optional[LlmParams] = None, **kwargs) -> Backend:
    if name == "rule":
        return RuleBackend(**kwargs)
    if name == "http":
        return HttpBackend(llm or LlmParams(), **kwargs)
    if name == "scripted":
        kwargs.setdefault("responses", all_clear_responder)
        return ScriptedBackend(**kwargs)
    raise ValueError(f"unknown backend {name!r}")
