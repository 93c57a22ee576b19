"""Golden-file checks on the audit log format."""

from __future__ import annotations

import json
from datetime import datetime, timedelta
from pathlib import Path

from r2o.audit import END_FIELDS, START_FIELDS, AuditLog, AuditRecord, coverage_errors, public_notice, read_jsonl
from r2o.gating import Gate
from r2o.monitors import MonitorVector

GOLDEN = Path(__file__).parent / "golden" / "toy_audit.jsonl"
T0 = datetime(2025, 1, 15)


class Constant:
    policy_id = "constant"
    version = "1.0"

    def act(self, state):
        return "policy"


def toy_log(config) -> str:
    gate = Gate(
        config=config,
        domain="power",
        policy=Constant(),
        fallbacks={"n-1_deterministic": lambda s: 0, "equity_rotations": lambda s: 1},
        scenario_id="toy",
    )
    for k, m in enumerate([MonitorVector(0, hazard=5e-4), MonitorVector(1, disparity=2.5), MonitorVector(2)]):
        gate.step(None, m, T0 + timedelta(hours=k))
    gate.finish(T0 + timedelta(hours=3))
    return gate.audit.to_jsonl()


def test_field_names_are_stable():
    assert START_FIELDS == (
        "audit_id", "event", "timestamp", "scenario_id", "policy_id", "policy_version", "mode", "level",
        "authority", "fallback_name", "trigger", "started_at", "expires_at", "review_opened", "notes",
    )
    assert END_FIELDS == ("audit_id", "event", "timestamp", "scenario_id", "level", "ended_at", "end_reason")


def test_toy_run_matches_golden_file(config):
    assert toy_log(config) == GOLDEN.read_text(encoding="utf-8")


def test_golden_records_round_trip(tmp_path):
    records = read_jsonl(GOLDEN)
    again = "".join(json.dumps(r.to_dict(), separators=(",", ":")) + "\n" for r in records)
    assert again == GOLDEN.read_text(encoding="utf-8")


def test_log_mirror_is_append_only(tmp_path):
    path = tmp_path / "audit.jsonl"
    log = AuditLog(path=path)
    rec = AuditRecord("a-1", "override_started", T0, "toy", "L1", started_at=T0, expires_at=T0 + timedelta(hours=4))
    log.append(rec)
    first = path.read_text()
    log.append(AuditRecord("a-1", "override_ended", T0, "toy", "L1", ended_at=T0 + timedelta(hours=1), end_reason="x"))
    assert path.read_text().startswith(first)
    assert len(path.read_text().splitlines()) == 2


def test_coverage_counts_overlaps():
    a = AuditRecord("a", "override_started", T0, "toy", "L1", started_at=T0)
    b = AuditRecord("b", "override_started", T0, "toy", "L2", started_at=T0)
    assert coverage_errors([T0 + timedelta(minutes=5)], [a]) == []
    assert coverage_errors([T0 + timedelta(minutes=5)], [a, b])
    assert coverage_errors([T0 - timedelta(minutes=5)], [a])


def test_notice_fields():
    rec = read_jsonl(GOLDEN)[0]
    notice = public_notice(rec, "contingency list")
    assert list(notice) == [
        "notice_id", "audit_id", "issued_at", "scenario_id", "action", "rationale",
        "thresholds", "fallback", "fallback_description", "in_effect_until", "review",
    ]
    assert notice["audit_id"] == rec.audit_id
