"""Configuration tree: simulation constants, demand, vehicle types and tunables.

Everything that is a modelling choice rather than a law of the protocol lives
here so it can be swapped from a YAML file without touching code.
"""

from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .core import PriorityClass


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class VehicleTypeProfile:
    name: str
    length_m: float
    accel: float
    decel: float
    v_max: float
    priority: PriorityClass
    occupancy: int

    def __post_init__(self) -> None:
        for f in ("length_m", "accel", "decel", "v_max"):
            if getattr(self, f) <= 0:
                raise ConfigError(f"vehicle_types.{self.name}.{f}", "must be positive")
        if self.occupancy < 1:
            raise ConfigError(f"vehicle_types.{self.name}.occupancy", "must be >= 1")


DEFAULT_VEHICLE_TYPES = {
    "car": VehicleTypeProfile("car", 5.0, 2.6, 4.5, 13.89, PriorityClass.NORMAL, 1),
    "bus": VehicleTypeProfile("bus", 12.0, 1.2, 3.5, 11.11, PriorityClass.TRANSIT, 35),
    "ambulance": VehicleTypeProfile("ambulance", 6.0, 3.0, 5.0, 16.67, PriorityClass.EMERGENCY, 2),
}


@dataclass(frozen=True)
class DemandScenario:
    """Hourly demand per approach; N/S carry ``ns_straight``, E/W ``ew_straight``.

    ``turns`` is the per-approach turning volume, split between left and right
    by ``left_share``.  ``emergency`` is the network-wide ambulance rate,
    spread evenly over the four approaches as straight movements.
    ``transit_share`` is the fraction of non-emergency arrivals that are buses.
    """

    name: str
    ns_straight: float
    ew_straight: float
    turns: float
    emergency: float = 20.0
    expected_vc: Optional[float] = None
    left_share: float = 0.5
    transit_share: float = 0.05

    def __post_init__(self) -> None:
        for f in ("ns_straight", "ew_straight", "turns", "emergency"):
            if getattr(self, f) < 0:
                raise ConfigError(f"scenario.{f}", "demand must be non-negative")
        for f in ("left_share", "transit_share"):
            if not 0.0 <= getattr(self, f) <= 1.0:
                raise ConfigError(f"scenario.{f}", "must lie in [0, 1]")
        if self.expected_vc is not None:
            from .metrics import vc_ratio

            got = vc_ratio(self)
            if abs(got - self.expected_vc) > 0.005:
                raise ConfigError("scenario.expected_vc",
                                  f"demand gives v/c {got:.4f}, expected {self.expected_vc}")


SCENARIOS = {
    "low": DemandScenario("low", 150, 120, 40, expected_vc=0.24),
    "medium": DemandScenario("medium", 400, 300, 100, expected_vc=0.63),
    "high": DemandScenario("high", 600, 500, 150, expected_vc=0.94),
}


@dataclass(frozen=True)
class SimConfig:
    step_s: float = 1.0
    horizon_s: int = 3600
    edge_length_m: float = 600.0
    advisory_horizon_m: float = 400.0
    near_zone_m: float = 200.0
    v_min: float = 3.0
    v_max: float = 13.89
    conflict_zone_m: float = 12.0
    seed: int = 7
    standstill_gap_m: float = 2.0
    stop_speed_mps: float = 0.1
    sample_every: int = 10

    def __post_init__(self) -> None:
        if self.step_s != 1.0:
            raise ConfigError("sim.step_s", "the kernel integrates at exactly 1 s")
        if self.horizon_s <= 0:
            raise ConfigError("sim.horizon_s", "must be positive")
        if not self.near_zone_m < self.advisory_horizon_m:
            raise ConfigError("sim.near_zone_m", "near zone must be smaller than the advisory horizon")
        if self.advisory_horizon_m > self.edge_length_m:
            raise ConfigError("sim.advisory_horizon_m", "advisory horizon cannot exceed the edge length")
        if not 0 < self.v_min < self.v_max:
            raise ConfigError("sim.v_min", "need 0 < v_min < v_max")
        if self.conflict_zone_m <= 0:
            raise ConfigError("sim.conflict_zone_m", "must be positive")
        if self.sample_every < 1:
            raise ConfigError("sim.sample_every", "must be >= 1")

    def trip_length(self, vehicle_length_m: float) -> float:
        """Spawn-to-despawn distance: inbound edge, the zone, and the body length."""
        return self.edge_length_m + self.conflict_zone_m + vehicle_length_m


@dataclass(frozen=True)
class LidsaParams:
    theta_p: float = 100.0
    delta_p: float = 50.0
    alpha_slow: float = 20.0
    eta: float = 0.85
    delta_gap_s: float = 3.0
    tau_safe_s: float = 0.0
    # leader speed used by FOLLOW: the leader's role advisory or its measured speed
    follow_reference: str = "advisory"
    cadence_s: int = 30
    timeout_s: float = 30.0
    wait_band_s: float = 5.0
    wait_band_max: int = 24
    budget_emergency_s: float = 10.0
    budget_transit_s: float = 20.0
    budget_normal_s: float = 30.0
    backend: str = "rule"

    def __post_init__(self) -> None:
        if self.theta_p <= 0 or self.delta_p <= 0:
            raise ConfigError("lidsa.theta_p", "pressure thresholds must be positive")
        if not 0 < self.eta <= 1:
            raise ConfigError("lidsa.eta", "must lie in (0, 1]")
        if self.follow_reference not in ("advisory", "measured"):
            raise ConfigError("lidsa.follow_reference",
                              f"expected 'advisory' or 'measured', got {self.follow_reference!r}")
        if self.backend not in ("rule", "http", "scripted"):
            raise ConfigError("lidsa.backend", f"unknown backend {self.backend!r}")

    def class_budget(self, pc: PriorityClass) -> float:
        return {PriorityClass.EMERGENCY: self.budget_emergency_s,
                PriorityClass.TRANSIT: self.budget_transit_s,
                PriorityClass.NORMAL: self.budget_normal_s}[pc]


@dataclass(frozen=True)
class WatchdogParams:
    enabled: bool = True
    v_hold: float = 2.0
    watch_radius_m: float = 80.0


@dataclass(frozen=True)
class MetricsParams:
    vsp_bin_edges: tuple[float, ...] = (0.0, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0)
    vsp_bin_rates: tuple[float, ...] = (0.40, 0.55, 0.90, 1.25, 1.60, 1.95, 2.30, 2.65)
    idle_rate_gps: float = 0.40
    mass_kg: float = 1500.0
    priority_threshold_emergency_s: float = 10.0
    priority_threshold_transit_s: float = 20.0
    energy_stop_limit: int = 2
    temporal_budgets_s: tuple[float, ...] = (30.0, 60.0, 120.0)
    temporal_vc_cuts: tuple[float, ...] = (0.4, 0.8)

    def __post_init__(self) -> None:
        if len(self.vsp_bin_rates) != len(self.vsp_bin_edges) + 1:
            raise ConfigError("metrics.vsp_bin_rates", "need one more rate than bin edges")
        if list(self.vsp_bin_edges) != sorted(self.vsp_bin_edges):
            raise ConfigError("metrics.vsp_bin_edges", "edges must be increasing")
        if len(self.temporal_budgets_s) != len(self.temporal_vc_cuts) + 1:
            raise ConfigError("metrics.temporal_budgets_s", "need one more budget than v/c cuts")


@dataclass(frozen=True)
class LlmParams:
    endpoint: str = "http://127.0.0.1:8080/v1/arbitrate"
    model: str = "gemini-2.5-flash-lite"
    temperature: float = 0.0
    seed: int = 42
    max_tokens: int = 2048
    timeout_s: float = 30.0
    api_key_env: str = "LIDSA_API_KEY"


@dataclass(frozen=True)
class FixedParams:
    g_ns: float = 30.0
    g_ew: float = 30.0
    yellow: float = 4.0


@dataclass(frozen=True)
class ScatsParams:
    # (upper d_s bound, g_ns, g_ew); the last bound is open-ended.
    plans: tuple[tuple[float, float, float], ...] = ((0.50, 20.0, 20.0),
                                                     (0.80, 35.0, 25.0),
                                                     (math.inf, 50.0, 40.0))
    yellow: float = 4.0
    saturation_flow: float = 1800.0
    capacity_green_s: float = 30.0
    capacity_cycle_s: float = 68.0


@dataclass(frozen=True)
class AimParams:
    grid_n: int = 10
    zone_side_m: float = 30.0
    request_radius_m: float = 60.0
    prune_every: int = 10
    max_scan_s: int = 600
    # reservation table time resolution; must divide the 1 s step
    time_resolution_s: float = 0.25

    def __post_init__(self) -> None:
        ticks = 1.0 / self.time_resolution_s if self.time_resolution_s > 0 else 0.0
        if ticks < 1 or abs(ticks - round(ticks)) > 1e-9:
            raise ConfigError("aim.time_resolution_s", "must be 1/k s for a whole k >= 1")


@dataclass(frozen=True)
class GlosaParams:
    min_separation_s: float = 3.0


@dataclass(frozen=True)
class Params:
    lidsa: LidsaParams = field(default_factory=LidsaParams)
    watchdog: WatchdogParams = field(default_factory=WatchdogParams)
    metrics: MetricsParams = field(default_factory=MetricsParams)
    llm: LlmParams = field(default_factory=LlmParams)
    fixed: FixedParams = field(default_factory=FixedParams)
    scats: ScatsParams = field(default_factory=ScatsParams)
    aim: AimParams = field(default_factory=AimParams)
    glosa: GlosaParams = field(default_factory=GlosaParams)
    vehicle_types: dict[str, VehicleTypeProfile] = field(
        default_factory=lambda: dict(DEFAULT_VEHICLE_TYPES))


# -- YAML round trip -----------------------------------------------------------

_SECTIONS = {
    "lidsa": LidsaParams, "watchdog": WatchdogParams, "metrics": MetricsParams,
    "llm": LlmParams, "fixed": FixedParams, "scats": ScatsParams, "aim": AimParams,
    "glosa": GlosaParams,
}


def _coerce(value: Any, tp: Any, path: str) -> Any:
    origin = typing.get_origin(tp)
    if origin is Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return None if value is None else _coerce(value, args[0], path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(path, f"expected {len(args)} items")
        return tuple(_coerce(v, t, f"{path}[{i}]") for i, (v, t) in enumerate(zip(value, args)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, "expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, str) and value.strip().lower() in ("inf", ".inf", "infinity"):
            return math.inf
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if tp is PriorityClass:
        try:
            return PriorityClass[str(value).upper()]
        except KeyError:
            raise ConfigError(path, f"unknown priority class {value!r}") from None
    raise ConfigError(path, f"unsupported field type {tp}")


def _build(cls: type, raw: Any, path: str, **fixed: Any) -> Any:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}", "unknown key")
    kwargs = dict(fixed)
    for key, value in raw.items():
        kwargs[key] = _coerce(value, hints[key], f"{path}.{key}")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(path, str(exc)) from None


def _build_scenario(raw: Any) -> DemandScenario:
    if raw is None:
        return SCENARIOS["medium"]
    if isinstance(raw, str):
        try:
            return SCENARIOS[raw.lower()]
        except KeyError:
            raise ConfigError("scenario", f"unknown scenario {raw!r}") from None
    return _build(DemandScenario, raw, "scenario")


def _build_vehicle_types(raw: Any) -> dict[str, VehicleTypeProfile]:
    types = dict(DEFAULT_VEHICLE_TYPES)
    if raw is None:
        return types
    if not isinstance(raw, dict):
        raise ConfigError("vehicle_types", "expected a mapping")
    for name, spec in raw.items():
        if name not in types:
            raise ConfigError(f"vehicle_types.{name}", "unknown vehicle type")
        merged = {k: v for k, v in dataclasses.asdict(types[name]).items() if k != "name"}
        merged["priority"] = types[name].priority.name
        merged.update(spec or {})
        types[name] = _build(VehicleTypeProfile, merged, f"vehicle_types.{name}", name=name)
    return types


def config_from_dict(tree: Optional[dict]) -> tuple[SimConfig, DemandScenario, Params]:
    tree = tree or {}
    if not isinstance(tree, dict):
        raise ConfigError("<root>", "expected a mapping at the top level")
    known = {"sim", "scenario", "vehicle_types", *_SECTIONS}
    unknown = sorted(set(tree) - known)
    if unknown:
        raise ConfigError(unknown[0], "unknown section")
    sim = _build(SimConfig, tree.get("sim"), "sim")
    demand = _build_scenario(tree.get("scenario"))
    sections = {name: _build(cls, tree.get(name), name) for name, cls in _SECTIONS.items()}
    params = Params(vehicle_types=_build_vehicle_types(tree.get("vehicle_types")), **sections)
    return sim, demand, params


def load_config(path: Union[str, Path, None]) -> tuple[SimConfig, DemandScenario, Params]:
    """Read a YAML config; missing keys take the published defaults."""
    if path is None:
        return config_from_dict({})
    text = Path(path).read_text()
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    return config_from_dict(tree)


def _plain(value: Any) -> Any:
    if isinstance(value, PriorityClass):
        return value.name
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def config_to_dict(sim: SimConfig, demand: DemandScenario, params: Params) -> dict:
    tree: dict[str, Any] = {"sim": _plain(dataclasses.asdict(sim)),
                            "scenario": _plain(dataclasses.asdict(demand))}
    for name in _SECTIONS:
        tree[name] = _plain(dataclasses.asdict(getattr(params, name)))
    tree["vehicle_types"] = {
        name: _plain({k: v for k, v in dataclasses.asdict(p).items() if k != "name"})
        for name, p in params.vehicle_types.items()
    }
    return tree


def dump_config(sim: SimConfig, demand: DemandScenario, params: Params) -> str:
    return yaml.safe_dump(config_to_dict(sim, demand, params), sort_keys=True)
