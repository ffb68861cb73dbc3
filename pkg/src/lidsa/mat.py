"""Memoized arbitration table keyed by banded conflict signatures."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

from .arbitration import ApproachState, RoleAssignment, pressure
from .core import Approach
from .scenario import LidsaParams

INACTIVE = "-"


def urgency_band(wait_s: float, class_budget_s: float) -> int:
    if class_budget_s <= 0:
        raise ValueError("class budget must be positive")
    return min(math.floor(wait_s / class_budget_s), 2)


def wait_band(wait_s: float, width_s: float = 5.0, cap: int = 24) -> int:
    return min(math.floor(wait_s / width_s), cap)


def pressure_band(p: float, theta_p: float) -> int:
    if p < theta_p / 2.0:
        return 0
    return 1 if p < theta_p else 2


def energy_band(mean_alpha: float) -> int:
    return min(math.floor(3.0 * mean_alpha), 2)


def queue_band(n: int) -> int:
    if n <= 1:
        return 0
    if n <= 4:
        return 1
    if n <= 9:
        return 2
    return 3


@dataclass(frozen=True)
class ConflictSignature:
    tokens: tuple

    def __str__(self) -> str:
        return "|".join(",".join(str(x) for x in tok) for tok in self.tokens)


def signature(states: Mapping[Approach, ApproachState], row_holder: Optional[Approach],
              params: LidsaParams, v_max: float = 13.89) -> ConflictSignature:
    tokens = []
    for a in Approach:
        st = states.get(a)
        if st is None:
            tokens.append((a.name, INACTIVE))
            continue
        tokens.append((
            a.name,
            st.dominant_priority.name,
            urgency_band(st.leader_wait_s, params.class_budget(st.dominant_priority)),
            pressure_band(pressure(st, params.alpha_slow, v_max), params.theta_p),
            energy_band(st.mean_energy_pref),
            queue_band(st.queue_len),
            wait_band(st.leader_wait_s, params.wait_band_s, params.wait_band_max),
        ))
    tokens.append(("net", queue_band(sum(s.queue_len for s in states.values()))))
    tokens.append(("holder", row_holder.name if row_holder is not None else INACTIVE))
    return ConflictSignature(tuple(tokens))


@dataclass
class MatStats:
    hits: int = 0
    misses: int = 0
    fallbacks: int = 0
    llm_calls: int = 0
    latencies_s: list[float] = field(default_factory=list)
    size: int = 0

    @property
    def lookups(self) -> int:
        return self.hits + self.misses

    @property
    def hit_rate(self) -> Optional[float]:
        return self.hits / self.lookups if self.lookups else None

    def to_dict(self) -> dict[str, Any]:
        lat = sorted(self.latencies_s)
        p95 = None
        if lat:
            # nearest-rank percentile
            p95 = lat[max(0, math.ceil(0.95 * len(lat)) - 1)]
        return {
            "llm_calls": self.llm_calls,
            "hits": self.hits,
            "misses": self.misses,
            "hit_rate": self.hit_rate,
            "size": self.size,
            "fallbacks": self.fallbacks,
            "mean_latency_s": statistics.fmean(lat) if lat else None,
            "p95_latency_s": p95,
        }


class MemoTable:
    """Signature -> assignment map.  Starts empty each run and never evicts."""

    def __init__(self) -> None:
        self._table: dict[ConflictSignature, RoleAssignment] = {}
        self.stats = MatStats()

    def __len__(self) -> int:
        return len(self._table)

    def __contains__(self, sig: ConflictSignature) -> bool:
        return sig in self._table

    def lookup(self, sig: ConflictSignature) -> Optional[RoleAssignment]:
        found = self._table.get(sig)
        if found is None:
            self.stats.misses += 1
        else:
            self.stats.hits += 1
        return found

    def store(self, sig: ConflictSignature, assignment: RoleAssignment) -> None:
        self._table[sig] = assignment
        self.stats.size = len(self._table)
