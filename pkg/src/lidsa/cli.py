"""Command line entry point: run, campaign, report, bench."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import __version__
from .backends import all_clear_responder, make_backend
from .bench import run_suite
from .runner import (CONTROLLERS, RunKey, aggregate, execute, failures,
                     load_campaign, load_records, render_report, run_matrix, write_record)
from .scenario import SCENARIOS, ConfigError, config_from_dict

log = logging.getLogger("lidsa")

EXIT_OK, EXIT_CONFIG, EXIT_RUN = 0, 1, 2


def _read_tree(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        tree = yaml.safe_load(Path(path).read_text()) or {}
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from None
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    if not isinstance(tree, dict):
        raise ConfigError("<root>", "expected a mapping at the top level")
    return tree


def _with_backend(tree: dict, backend: Optional[str]) -> dict:
    if backend is not None:
        tree = dict(tree)
        tree["lidsa"] = dict(tree.get("lidsa") or {}, backend=backend)
    return tree


def cmd_run(args) -> int:
    tree = _with_backend(_read_tree(args.config), args.backend)
    tree.pop("campaign", None)
    tree.pop("scenario", None)
    config_from_dict(tree)
    key = RunKey(args.controller, args.scenario, args.seed)
    record = execute(key, tree)
    path = write_record(record, args.out)
    if record["status"] != "ok":
        print(f"run {key} failed: {record['error']}", file=sys.stderr)
        return EXIT_RUN
    m = record["metrics"]
    print(f"{key}: delay {m['mean_control_delay_s']:.2f} s (LOS {m['los_grade']}), "
          f"throughput {m['throughput']}, peak queue {m['peak_queue']:.0f} -> {path}")
    return EXIT_OK


def cmd_campaign(args) -> int:
    camp = load_campaign(args.config)
    if args.backend is not None:
        camp.base = _with_backend(camp.base, args.backend)
    if args.workers is not None:
        camp.workers = args.workers
    runs_dir = Path(args.out) / "runs"
    records = run_matrix(camp, runs_dir)
    rows = aggregate(records)
    Path(args.out, "report.csv").write_text(render_report(rows, "csv"))
    Path(args.out, "report.json").write_text(render_report(rows, "json"))
    bad = failures(records)
    print(f"{len(records) - len(bad)} runs ok, {len(bad)} failed; report in {args.out}")
    for rec in bad:
        print(f"  failed {rec['controller']}/{rec['scenario']}/{rec['seed']}: {rec['error']}",
              file=sys.stderr)
    return EXIT_RUN if bad else EXIT_OK


def cmd_report(args) -> int:
    src = Path(args.inp)
    runs = src / "runs" if (src / "runs").is_dir() else src
    records = load_records(runs)
    if not records:
        print(f"no run files in {runs}", file=sys.stderr)
        return EXIT_RUN
    text = render_report(aggregate(records), args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_RUN if failures(records) else EXIT_OK


BENCH_COLUMNS = ["backend", "calls", "logic_accuracy", "json_parse_rate", "role_safety",
                 "mean_latency_ms", "p95_latency_ms", "calls_over_5000ms", "latency_score",
                 "composite", "disqualified"]


def cmd_bench(args) -> int:
    _, _, params = config_from_dict(_read_tree(args.config))
    if args.backend == "scripted":
        backend = make_backend("scripted", responses=all_clear_responder,
                               latency_s=args.latency_ms / 1000.0,
                               timeout_s=params.lidsa.timeout_s)
    elif args.backend == "http":
        backend = make_backend("http", params.llm)
    else:
        backend = make_backend("rule")
    try:
        result = run_suite(backend, params.lidsa)
    finally:
        backend.close()
    summary = result.summary()
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, extrasaction="ignore",
                           lineterminator="\n")
        w.writeheader()
        w.writerow(summary)
        text = buf.getvalue()
    else:
        text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(f"{result.backend}: composite {result.composite:.4f} "
          f"(S_l {result.logic_accuracy:.3f}, S_j {result.json_parse_rate:.3f}, "
          f"S_s {result.role_safety:.3f}, mean latency {result.mean_latency_ms:.1f} ms)"
          + (" DISQUALIFIED" if result.disqualified else ""))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lidsa", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="one simulation run")
    r.add_argument("--controller", required=True, choices=CONTROLLERS)
    r.add_argument("--scenario", required=True, choices=sorted(SCENARIOS))
    r.add_argument("--seed", type=int, default=7)
    r.add_argument("--config", help="YAML config file")
    r.add_argument("--out", default="results/runs", help="directory for the run file")
    r.add_argument("--backend", choices=("rule", "http", "scripted"),
                   help="arbitration backend for lidsa (default: rule)")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("campaign", help="controller x scenario x seed matrix")
    c.add_argument("--config", help="YAML config with an optional 'campaign' section")
    c.add_argument("--out", default="results", help="output directory")
    c.add_argument("--workers", type=int, help="parallel worker processes")
    c.add_argument("--backend", choices=("rule", "http", "scripted"))
    c.set_defaults(func=cmd_campaign)

    rep = sub.add_parser("report", help="aggregate run files")
    rep.add_argument("--in", dest="inp", required=True, help="campaign or runs directory")
    rep.add_argument("--format", choices=("csv", "json"), default="csv")
    rep.add_argument("--out", help="write here instead of stdout")
    rep.set_defaults(func=cmd_report)

    b = sub.add_parser("bench", help="score an arbitration backend on the fixture suite")
    b.add_argument("--backend", choices=("rule", "http", "scripted"), default="rule")
    b.add_argument("--out", help="report path")
    b.add_argument("--format", choices=("json", "csv"), default="json")
    b.add_argument("--config", help="YAML config (llm and lidsa sections)")
    b.add_argument("--latency-ms", type=float, default=0.0,
                   help="declared per-call latency for the scripted backend")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
