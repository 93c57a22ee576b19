from __future__ import annotations

import json
from dataclasses import replace
from datetime import datetime, timedelta

import pytest

from r2o.artifacts import (
    ArtifactError,
    IncidentNotReportableError,
    generate_incident_report,
    make_fixture_workspace,
    reportable_ids,
    run_review_gate,
    sensitivity_sweep,
    stage_check_name,
    threshold_names,
    validate_incident_report,
    validate_worksheet,
    worksheet_template,
    write_incident_reports,
)
from r2o.audit import AuditRecord
from r2o.config import Reviews

T0 = datetime(2025, 1, 15)


def l2_records(hours, trigger=()):
    start = AuditRecord(
        "x-0001", "override_started", T0, "synthetic", "L2",
        policy_id="p", policy_version="1", authority="municipal_pause", fallback_name="equity_rotations",
        trigger=trigger, started_at=T0, expires_at=T0 + timedelta(hours=72), review_opened=True,
    )
    end = AuditRecord(
        "x-0001", "override_ended", T0 + timedelta(hours=hours), "synthetic", "L2",
        ended_at=T0 + timedelta(hours=hours), end_reason="expired",
    )
    return [start, end]


def test_case1_report_from_its_own_log(power_case, config):
    records = power_case.run.audit
    (audit_id,) = reportable_ids(records)
    report = generate_incident_report(audit_id, records, power_case.run, config)
    assert report.valid
    assert report.trigger[0]["monitor"] == "disparity"
    assert float(report.trigger[0]["observed"]) >= 1.2
    assert report.immediate_action["fallback"] == "equity_rotations"
    assert report.public_notice["notice_id"] == f"notice-{audit_id}"
    assert validate_incident_report(report, records) == []


def test_72_hours_is_valid_73_is_not(config):
    ok = generate_incident_report("x-0001", l2_records(72), config=config)
    assert ok.valid
    late = generate_incident_report("x-0001", l2_records(73), config=config)
    assert not late.valid
    assert "72" in late.invariant_violations[0]


def test_no_affected_groups_gives_empty_table(config):
    report = generate_incident_report("x-0001", l2_records(1), config=config)
    assert report.to_dict()["affected"] == []


def test_open_override_is_not_reportable(config):
    with pytest.raises(IncidentNotReportableError):
        generate_incident_report("x-0001", l2_records(1)[:1], config=config)


def test_unknown_id_raises(config):
    with pytest.raises(ArtifactError):
        generate_incident_report("nope", l2_records(1), config=config)


def test_report_back_reference_is_checked(config):
    report = generate_incident_report("x-0001", l2_records(1), config=config).to_dict()
    report["audit_id"] = "y-0009"
    assert validate_incident_report(report, l2_records(1))


def test_report_field_order_is_stable(config, tmp_path):
    report = generate_incident_report("x-0001", l2_records(2), config=config)
    (path,) = write_incident_reports(tmp_path, [report])
    assert path == tmp_path / "reports" / "incidents" / "x-0001.json"
    assert list(json.loads(path.read_text())) == [
        "audit_id", "scenario_id", "trigger", "immediate_action", "affected", "root_causes",
        "mitigations", "public_notice", "corrective_actions", "invariant_violations",
    ]


def test_worksheet_template_covers_thresholds(config):
    ws = worksheet_template(config, "district heating", protected_services=("clinic",), decision="approved")
    assert set(threshold_names(config)) <= set(ws.thresholds)
    assert validate_worksheet(ws, config) == []
    assert validate_worksheet(replace(ws, decision="maybe"), config)
    assert validate_worksheet(replace(ws, decision="approved_with_conditions"), config)


def test_complete_workspace_passes(tmp_path, config):
    make_fixture_workspace(tmp_path, config)
    result = run_review_gate(tmp_path, config)
    assert result.passed, result.failed


@pytest.mark.parametrize(
    "relpath,check",
    [
        ("docs/model_card.md", "model_card"),
        ("docs/datasheet.md", "datasheet"),
        ("reviews/scenario_walkthrough.done", "pre_deploy.scenario_walkthrough"),
        ("reviews/shadow_mode.done", "pre_deploy.shadow_mode"),
        ("reviews/civic_tabletop.done", "pre_deploy.civic_tabletop"),
    ],
)
def test_missing_item_fails_named_check(tmp_path, config, relpath, check):
    make_fixture_workspace(tmp_path, config)
    (tmp_path / relpath).unlink()
    result = run_review_gate(tmp_path, config)
    assert result.failed == [check]


def test_extra_stage_adds_required_check(tmp_path, config):
    make_fixture_workspace(tmp_path, config)
    extended = replace(config, reviews=Reviews(pre_deploy=(*config.reviews.pre_deploy, "accessibility_audit")))
    result = run_review_gate(tmp_path, extended)
    assert result.failed == [stage_check_name("accessibility_audit")]


def test_unreadable_workspace_raises(tmp_path, config):
    with pytest.raises(FileNotFoundError):
        run_review_gate(tmp_path / "missing", config)


def test_empty_sweep_is_empty(config):
    assert sensitivity_sweep("power", "tau_D", [], config) == []


def test_power_sweep_respects_each_cap(config):
    rows = sensitivity_sweep("power", "tau_D", [1.0, 1.2, 1.5, 2.0], config)
    for row in rows:
        assert row["gated_D"] <= row["tau_D"] + 1e-6
        assert row["max_window_D"] <= row["tau_D"] + 1e-6


def test_building_sweep_monotone(config):
    rows = sensitivity_sweep("building", "tau_A", [60, 30, 10], config)
    hours = [r["discomfort_hours"] for r in rows]
    assert hours == sorted(hours, reverse=True)


def test_sweep_is_deterministic(config):
    args = ("building", "tau_A", [10, 30], config)
    assert sensitivity_sweep(*args) == sensitivity_sweep(*args)


def test_sweep_rejects_bad_values(config):
    with pytest.raises(ArtifactError):
        sensitivity_sweep("power", "tau_D", [-1.0], config)
    with pytest.raises(ArtifactError):
        sensitivity_sweep("power", "tau_X", [1.0], config)
