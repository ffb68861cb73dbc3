"""Experiment orchestration: controller x scenario x seed matrix with checkpoints.

Each run writes one immutable JSON file named by a hash of its key and the
effective configuration.  A campaign only executes runs whose file is
missing, and the report is rebuilt from whatever files are on disk.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
import statistics
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import yaml

from .baselines import AimController, FixedCycleController, GlosaController, ScatsController
from .backends import make_backend
from .control import LidsaController
from .engine import Simulation
from .metrics import METRIC_COLUMNS, los
from .scenario import SCENARIOS, ConfigError, Params, SimConfig, config_from_dict, config_to_dict
from .watchdog import Watchdog

log = logging.getLogger(__name__)

CONTROLLERS = ("fixed", "scats", "aim", "glosa", "lidsa")
DEFAULT_SEEDS = (7, 41, 129)
BASELINE = "fixed"

# Report columns whose change against Fixed is reported in percent.
DELTA_COLUMNS = ("mean_control_delay_s", "avg_queue", "peak_queue", "mean_wait_s",
                 "fuel_g_per_veh", "ke_loss_kj_per_veh", "stops_per_veh", "intent_overall")


@dataclass(frozen=True, order=True)
class RunKey:
    controller: str
    scenario: str
    seed: int

    def __post_init__(self) -> None:
        if self.controller not in CONTROLLERS:
            raise ConfigError("controller", f"unknown controller {self.controller!r}")
        if self.scenario not in SCENARIOS:
            raise ConfigError("scenario", f"unknown scenario {self.scenario!r}")

    def __str__(self) -> str:
        return f"{self.controller}/{self.scenario}/{self.seed}"


def make_controller(name: str, sim: SimConfig, params: Params, backend=None):
    if name == "fixed":
        return FixedCycleController(params.fixed)
    if name == "scats":
        return ScatsController(params.scats)
    if name == "aim":
        return AimController(sim, params.aim)
    if name == "glosa":
        return GlosaController(sim, params.fixed, params.glosa)
    if name == "lidsa":
        if backend is None:
            backend = make_backend(params.lidsa.backend, params.llm,
                                   timeout_s=params.lidsa.timeout_s)
        return LidsaController(sim, params.lidsa, backend)
    raise ConfigError("controller", f"unknown controller {name!r}")


def _effective_tree(key: RunKey, base: Optional[dict]) -> dict:
    """Full configuration tree for one run, defaults filled in."""
    tree = copy.deepcopy(base or {})
    tree["scenario"] = key.scenario
    tree.setdefault("sim", {})
    tree["sim"] = dict(tree["sim"], seed=key.seed)
    sim, demand, params = config_from_dict(tree)
    return config_to_dict(sim, demand, params)


def _canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def run_id(key: RunKey, base: Optional[dict] = None) -> str:
    payload = _canonical({"key": [key.controller, key.scenario, key.seed],
                          "config": _effective_tree(key, base)})
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def run_filename(key: RunKey, base: Optional[dict] = None) -> str:
    return f"{key.controller}-{key.scenario}-{key.seed}-{run_id(key, base)}.json"


def execute(key: RunKey, base: Optional[dict] = None) -> dict:
    """Run one simulation and return its record.  Never raises for run errors."""
    tree = _effective_tree(key, base)
    record: dict[str, Any] = {
        "controller": key.controller, "scenario": key.scenario, "seed": key.seed,
        "run_id": run_id(key, base), "config": tree,
    }
    try:
        sim, demand, params = config_from_dict(tree)
        controller = make_controller(key.controller, sim, params)
        try:
            result = Simulation(sim, demand, params, controller,
                                Watchdog(sim, params.watchdog)).run()
        finally:
            close = getattr(controller, "close", None)
            if close is not None:
                close()
        record["status"] = "ok"
        record["metrics"] = result.to_dict()
    except Exception as exc:  # recorded and excluded from aggregation
        log.error("run %s failed: %s", key, exc)
        record["status"] = "failed"
        record["error"] = f"{type(exc).__name__}: {exc}"
        record["traceback"] = traceback.format_exc()
    return record


def dump_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True, indent=2) + "\n"


def write_record(record: dict, out_dir: Union[str, Path]) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    key = RunKey(record["controller"], record["scenario"], record["seed"])
    path = out / f"{key.controller}-{key.scenario}-{key.seed}-{record['run_id']}.json"
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(dump_record(record))
    tmp.replace(path)
    return path


# -- campaigns -------------------------------------------------------------------------


@dataclass
class Campaign:
    controllers: tuple[str, ...] = CONTROLLERS
    scenarios: tuple[str, ...] = ("low", "medium", "high")
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    workers: int = 1
    base: dict = field(default_factory=dict)

    def keys(self) -> list[RunKey]:
        return [RunKey(c, s, seed) for c in self.controllers for s in self.scenarios
                for seed in self.seeds]


def load_campaign(path: Union[str, Path, None]) -> Campaign:
    """A campaign file is a config file with an optional ``campaign`` section."""
    if path is None:
        return Campaign()
    try:
        tree = yaml.safe_load(Path(path).read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    if not isinstance(tree, dict):
        raise ConfigError("<root>", "expected a mapping at the top level")
    section = tree.pop("campaign", None) or {}
    allowed = {"controllers", "scenarios", "seeds", "workers"}
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"campaign.{unknown[0]}", "unknown key")
    tree.pop("scenario", None)  # the matrix decides the scenario
    config_from_dict(tree)  # validate once up front
    camp = Campaign(base=tree)
    if "controllers" in section:
        camp.controllers = tuple(str(c) for c in section["controllers"])
    if "scenarios" in section:
        camp.scenarios = tuple(str(s) for s in section["scenarios"])
    if "seeds" in section:
        camp.seeds = tuple(int(s) for s in section["seeds"])
    if "workers" in section:
        camp.workers = int(section["workers"])
    if len(set(camp.keys())) != len(camp.keys()):
        raise ConfigError("campaign", "duplicate run keys")
    camp.keys()  # RunKey validates names
    return camp


def _execute_packed(args: tuple[RunKey, dict]) -> dict:
    return execute(*args)


def run_matrix(campaign: Campaign, out_dir: Union[str, Path]) -> list[dict]:
    """Execute missing runs and return the records of this campaign's keys."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    todo = []
    for key in campaign.keys():
        if (out / run_filename(key, campaign.base)).exists():
            log.info("skip %s (checkpoint)", key)
        else:
            todo.append(key)
    log.info("%d of %d runs to execute", len(todo), len(campaign.keys()))
    if campaign.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=campaign.workers) as pool:
            for rec in pool.map(_execute_packed, [(k, campaign.base) for k in todo]):
                write_record(rec, out)
    else:
        for key in todo:
            write_record(execute(key, campaign.base), out)
    wanted = {run_filename(k, campaign.base) for k in campaign.keys()}
    return [r for p, r in _read_dir(out) if p.name in wanted]


def _read_dir(in_dir: Union[str, Path]) -> list[tuple[Path, dict]]:
    out = []
    for p in sorted(Path(in_dir).glob("*.json")):
        out.append((p, json.loads(p.read_text())))
    return out


def load_records(in_dir: Union[str, Path]) -> list[dict]:
    return [r for _, r in _read_dir(in_dir)]


# -- aggregation ---------------------------------------------------------------------------


def _mean_std(values: Sequence[float]) -> tuple[Optional[float], Optional[float]]:
    if not values:
        return None, None
    mean = math.fsum(values) / len(values)
    std = statistics.pstdev(values) if len(values) > 1 else 0.0
    return mean, std


def aggregate(records: Iterable[dict]) -> list[dict]:
    """Seed means and standard deviations per (controller, scenario)."""
    groups: dict[tuple[str, str], list[dict]] = {}
    failed: dict[tuple[str, str], int] = {}
    for rec in records:
        gk = (rec["controller"], rec["scenario"])
        if rec.get("status") != "ok":
            failed[gk] = failed.get(gk, 0) + 1
            continue
        groups.setdefault(gk, []).append(rec)
    rows = []
    order = {c: i for i, c in enumerate(CONTROLLERS)}
    sc_order = {s: i for i, s in enumerate(SCENARIOS)}
    for gk in sorted(set(groups) | set(failed),
                     key=lambda k: (sc_order.get(k[1], 99), order.get(k[0], 99))):
        recs = sorted(groups.get(gk, []), key=lambda r: r["seed"])
        row: dict[str, Any] = {"controller": gk[0], "scenario": gk[1], "runs": len(recs),
                               "failed": failed.get(gk, 0),
                               "seeds": [r["seed"] for r in recs]}
        for col in METRIC_COLUMNS:
            if col == "los_grade":
                continue
            nums = [float(r["metrics"][col]) for r in recs if r["metrics"][col] is not None]
            row[col], row[f"{col}_std"] = _mean_std(nums)
        # graded from the mean delay, not averaged over letters
        delay = row.get("mean_control_delay_s")
        row["los_grade"] = los(delay) if delay is not None else None
        hit = [r["metrics"]["mat"]["hit_rate"] for r in recs
               if r["metrics"].get("mat") and r["metrics"]["mat"].get("hit_rate") is not None]
        row["mat_hit_rate"], row["mat_hit_rate_std"] = _mean_std(hit)
        rows.append(row)
    _add_deltas(rows)
    return rows


def _add_deltas(rows: list[dict]) -> None:
    base = {r["scenario"]: r for r in rows if r["controller"] == BASELINE}
    for row in rows:
        ref = base.get(row["scenario"])
        for col in DELTA_COLUMNS:
            a = row.get(col)
            b = ref.get(col) if ref is not None else None
            row[f"{col}_delta_pct"] = (100.0 * (a - b) / b) if a is not None and b else None


def report_columns(rows: list[dict]) -> list[str]:
    cols = ["scenario", "controller", "runs", "failed", "los_grade"]
    for col in METRIC_COLUMNS:
        if col == "los_grade":
            continue
        cols += [col, f"{col}_std"]
        if col in DELTA_COLUMNS:
            cols.append(f"{col}_delta_pct")
    cols += ["mat_hit_rate", "mat_hit_rate_std"]
    return cols


def render_report(rows: list[dict], fmt: str = "csv") -> str:
    if fmt == "json":
        return json.dumps(rows, sort_keys=True, indent=2) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=report_columns(rows), extrasaction="ignore",
                            lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if v is None else round(v, 4) if isinstance(v, float) else v)
                         for k, v in row.items()})
    return buf.getvalue()


def failures(records: Iterable[dict]) -> list[dict]:
    return [r for r in records if r.get("status") != "ok"]
