from __future__ import annotations

import json
from pathlib import Path

import pytest

from r2o import cli
from r2o.config import canonical_document
from r2o.gating import InvariantError
from r2o.sim import power


def files(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_run_case_power_prints_table(capsys):
    assert cli.main(["run-case", "power", "--config", "default"]) == 0
    out = capsys.readouterr().out
    assert "table1_load_shedding" in out
    assert "Baseline" in out and "R2O" in out
    assert "ENS_total" in out


def test_outputs_are_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["run-case", "building", "--out", str(tmp_path / name), "--seed", "4"]) == 0
    a, b = files(tmp_path / "a"), files(tmp_path / "b")
    assert a == b
    assert {"table2_comfort_energy.txt", "building_report.json", "building_audit.jsonl", "building_monitors.csv"} <= set(a)


def test_tables_and_log_agree_on_overrides(tmp_path):
    assert cli.main(["run-case", "power", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "power_report.json").read_text())
    starts = [json.loads(line) for line in (tmp_path / "power_audit.jsonl").read_text().splitlines()]
    starts = [r for r in starts if r["event"] == "override_started"]
    assert report["override_count"] == len(starts) >= 1
    assert len(list((tmp_path / "notices").glob("*.json"))) == len(starts)


def test_delimited_format(tmp_path, capsys):
    assert cli.main(["run-case", "power", "--format", "delimited", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "table1_load_shedding.csv").read_text().startswith("variant,ENS_total,ENS_A,ENS_B,D\n")


def test_traffic_shadow_actuates_nothing(tmp_path):
    assert cli.main(["run-case", "traffic", "--mode", "shadow", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "traffic_report.json").read_text())
    assert report["fallback_steps"] == 0
    assert report["would_be_triggers"] >= 1
    assert all(s["action_source"] == "policy" for s in report["trace"])


def test_scenario_file_round_trip_through_cli(tmp_path, capsys):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(power.scenario_to_dict(power.case1_fixture(0))))
    assert cli.main(["run-case", "power", "--scenario", str(path)]) == 0
    from_file = capsys.readouterr().out
    assert cli.main(["run-case", "power"]) == 0
    assert capsys.readouterr().out == from_file


def test_validate_config_ok(tmp_path, capsys):
    path = tmp_path / "gov.yaml"
    path.write_text(canonical_document())
    assert cli.main(["validate-config", "--config", str(path)]) == 0
    assert "tau_D=1.2" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        ["validate-config", "--config", "{missing}"],
        ["run-case", "nuclear"],
        ["run-case", "power", "--scenario", "{bad_json}"],
        ["run-case", "building", "--scenario", "{wrong_case}"],
        ["validate-config", "--config", "{negative}"],
        ["sweep", "power", "--param", "tau_D", "--values", "1.0,abc"],
    ],
)
def test_input_errors_exit_1(tmp_path, argv, capsys):
    (tmp_path / "bad.json").write_text("{not json")
    (tmp_path / "power.json").write_text(json.dumps(power.scenario_to_dict(power.case1_fixture(0))))
    (tmp_path / "neg.yaml").write_text(canonical_document().replace("disparity: 1.2", "disparity: -1"))
    paths = {
        "missing": str(tmp_path / "nope.yaml"),
        "bad_json": str(tmp_path / "bad.json"),
        "wrong_case": str(tmp_path / "power.json"),
        "negative": str(tmp_path / "neg.yaml"),
    }
    assert cli.main([a.format(**paths) for a in argv]) == 1
    assert "error" in capsys.readouterr().err


def test_invariant_breach_exits_2(monkeypatch, capsys):
    def broken(*args, **kwargs):
        raise InvariantError("fallback window disparity 1.5 exceeds cap")

    monkeypatch.setattr(power, "run_power_case", broken)
    assert cli.main(["run-case", "power"]) == 2
    assert "invariant violated" in capsys.readouterr().err


def test_gate_and_report(tmp_path, capsys):
    ws = tmp_path / "ws"
    assert cli.main(["gate", str(ws), "--init"]) == 0
    (ws / "docs" / "datasheet.md").unlink()
    assert cli.main(["gate", str(ws)]) == 1
    assert "FAIL  datasheet" in capsys.readouterr().out

    run_dir = tmp_path / "run"
    assert cli.main(["run-case", "power", "--out", str(run_dir)]) == 0
    argv = ["report", "--audit", str(run_dir / "power_audit.jsonl"), "--run", str(run_dir / "power_report.json"), "--out", str(ws)]
    assert cli.main(argv) == 0
    (report,) = (ws / "reports" / "incidents").glob("*.json")
    assert json.loads(report.read_text())["public_notice"]["notice_id"].startswith("notice-")


def test_sweep_writes_table(tmp_path, capsys):
    assert cli.main(["sweep", "building", "--param", "tau_A", "--values", "10,30,60", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "sweep_building_tau_A.txt").read_text()
    assert text == capsys.readouterr().out
    assert len(text.splitlines()) == 5


def test_env_var_selects_config(tmp_path, monkeypatch, capsys):
    path = tmp_path / "gov.yaml"
    path.write_text(canonical_document().replace("disparity: 1.2", "disparity: 1.5"))
    monkeypatch.setenv("R2O_CONFIG", str(path))
    assert cli.main(["validate-config"]) == 0
    assert "tau_D=1.5" in capsys.readouterr().out
