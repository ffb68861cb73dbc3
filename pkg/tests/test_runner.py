"""Run records, checkpointed campaigns, aggregation and the command line."""

import json

import pytest
import yaml

from lidsa.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUN, main
from lidsa.runner import (Campaign, RunKey, aggregate, dump_record, execute, load_campaign,
                          load_records, render_report, run_filename, run_id, run_matrix)
from lidsa.scenario import ConfigError

SHORT = {"sim": {"horizon_s": 120}}


def fake(controller, scenario, seed, delay, status="ok"):
    rec = {"controller": controller, "scenario": scenario, "seed": seed, "status": status}
    if status == "ok":
        rec["metrics"] = {"throughput": 10, "mean_control_delay_s": delay, "mean_speed_kmh": 40.0,
                          "los_grade": "A", "avg_queue": 1.0, "peak_queue": 3.0,
                          "mean_wait_s": 1.0, "intent_overall": 90.0, "intent_spatial": 100.0,
                          "intent_temporal": 80.0, "intent_priority": None,
                          "intent_energy": 100.0, "fuel_g_per_veh": 50.0,
                          "ke_loss_kj_per_veh": 100.0, "stops_per_veh": 1.0,
                          "watchdog_overrides": 0, "mat": None}
    return rec


def test_run_key_validation():
    with pytest.raises(ConfigError):
        RunKey("magic", "medium", 1)
    with pytest.raises(ConfigError):
        RunKey("fixed", "rush", 1)


def test_run_id_depends_on_config():
    k = RunKey("fixed", "low", 7)
    assert run_id(k) == run_id(k, {})
    assert run_id(k) != run_id(k, {"fixed": {"g_ns": 20.0}})
    assert run_id(k) != run_id(RunKey("fixed", "low", 8))
    assert run_filename(k).startswith("fixed-low-7-")


def test_execute_is_byte_deterministic():
    k = RunKey("lidsa", "medium", 41)
    a, b = execute(k, SHORT), execute(k, SHORT)
    assert a["status"] == "ok"
    assert dump_record(a) == dump_record(b)
    assert a["config"]["sim"]["seed"] == 41 and a["config"]["scenario"]["name"] == "medium"
    assert a["metrics"]["mat"]["fallbacks"] == 0


def test_execute_records_failures(monkeypatch):
    import lidsa.runner as runner

    def boom(*a, **k):
        raise RuntimeError("kaput")

    monkeypatch.setattr(runner, "make_controller", boom)
    rec = execute(RunKey("fixed", "low", 1), SHORT)
    assert rec["status"] == "failed" and "kaput" in rec["error"]
    assert "Traceback" in rec["traceback"]


def test_campaign_checkpoints(tmp_path):
    camp = Campaign(controllers=("fixed", "aim"), scenarios=("low",), seeds=(1, 2), base=SHORT)
    recs = run_matrix(camp, tmp_path)
    files = sorted(tmp_path.glob("*.json"))
    assert len(recs) == len(files) == 4
    stamps = {p.name: p.stat().st_mtime_ns for p in files}
    run_matrix(camp, tmp_path)
    assert {p.name: p.stat().st_mtime_ns for p in tmp_path.glob("*.json")} == stamps
    victim = files[0]
    victim.unlink()
    run_matrix(camp, tmp_path)
    after = {p.name: p.stat().st_mtime_ns for p in tmp_path.glob("*.json")}
    assert set(after) == set(stamps)
    assert [n for n in after if after[n] != stamps[n]] == [victim.name]


def test_aggregate_means_and_deltas():
    recs = [fake("fixed", "low", s, 20.0) for s in (1, 2, 3)]
    recs += [fake("lidsa", "low", 1, 10.0), fake("lidsa", "low", 2, 14.0),
             fake("lidsa", "low", 3, 0.0, status="failed")]
    rows = {r["controller"]: r for r in aggregate(recs)}
    assert rows["fixed"]["mean_control_delay_s"] == 20.0
    assert rows["fixed"]["mean_control_delay_s_std"] == 0.0
    assert rows["fixed"]["los_grade"] == "B"
    lid = rows["lidsa"]
    assert lid["runs"] == 2 and lid["failed"] == 1
    assert lid["mean_control_delay_s"] == 12.0 and lid["mean_control_delay_s_std"] == 2.0
    assert lid["mean_control_delay_s_delta_pct"] == pytest.approx(-40.0)
    assert lid["intent_priority"] is None


def test_render_report_formats():
    rows = aggregate([fake("fixed", "low", 1, 20.0)])
    csv_text = render_report(rows, "csv")
    assert csv_text.splitlines()[0].startswith("scenario,controller,runs,failed,los_grade")
    assert json.loads(render_report(rows, "json"))[0]["controller"] == "fixed"
    with pytest.raises(ValueError):
        render_report(rows, "xml")


def test_load_campaign(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"campaign": {"controllers": ["fixed"], "seeds": [3]},
                                    "sim": {"horizon_s": 60}, "scenario": "high"}))
    camp = load_campaign(path)
    assert camp.controllers == ("fixed",) and camp.seeds == (3,)
    assert "scenario" not in camp.base
    path.write_text(yaml.safe_dump({"campaign": {"colour": "red"}}))
    with pytest.raises(ConfigError):
        load_campaign(path)


# -- command line ------------------------------------------------------------------------


def test_cli_run_and_report(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(SHORT))
    out = tmp_path / "runs"
    assert main(["run", "--controller", "glosa", "--scenario", "low", "--seed", "3",
                 "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    assert len(load_records(out)) == 1
    report = tmp_path / "r.csv"
    assert main(["report", "--in", str(out), "--out", str(report)]) == EXIT_OK
    assert "glosa" in report.read_text()


def test_cli_campaign(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(dict(SHORT, campaign={
        "controllers": ["fixed", "lidsa"], "scenarios": ["low"], "seeds": [1]})))
    assert main(["campaign", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    rows = json.loads((tmp_path / "report.json").read_text())
    assert {r["controller"] for r in rows} == {"fixed", "lidsa"}
    assert (tmp_path / "report.csv").exists()


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(yaml.safe_dump({"sim": {"near_zone_m": 500}}))
    code = main(["run", "--controller", "fixed", "--scenario", "low", "--config", str(cfg),
                 "--out", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert "sim.near_zone_m" in capsys.readouterr().err


def test_cli_run_failure_exit_code(tmp_path, monkeypatch):
    import lidsa.runner as runner

    def boom(*a, **k):
        raise RuntimeError("kaput")

    monkeypatch.setattr(runner, "make_controller", boom)
    code = main(["run", "--controller", "fixed", "--scenario", "low", "--out", str(tmp_path)])
    assert code == EXIT_RUN


def test_cli_report_on_empty_dir(tmp_path):
    assert main(["report", "--in", str(tmp_path)]) == EXIT_RUN


def test_cli_bench(tmp_path):
    out = tmp_path / "bench.json"
    assert main(["bench", "--backend", "rule", "--out", str(out)]) == EXIT_OK
    summary = json.loads(out.read_text())
    assert summary["calls"] == 67 and summary["logic_accuracy"] == 1.0
