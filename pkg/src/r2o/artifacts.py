"""Audit artifacts: walkthrough worksheets, incident reports, the review gate, sweeps.

Workspace layout checked by the review gate::

    docs/model_card.*        docs/datasheet.*
    reviews/<stage>.done     one marker per pre-deployment stage in the config
    reports/incidents/<audit-id>.json
    notices/<notice-id>.json
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Iterable, Literal, Sequence

from .audit import START, AuditRecord, isoformat, pair_spans, write_atomic
from .config import GovernanceConfig, Level, default_config, validate_cross_references
from .gating import SimulationReport, dumps

DECISIONS = ("approved", "approved_with_conditions", "rejected")
PLACEHOLDER = "TO BE COMPLETED"
DOMAINS = ("power", "buildings", "transport")


class ArtifactError(ValueError):
    pass


class IncidentNotReportableError(ArtifactError):
    """The override is still running, so there is nothing to review yet."""


# --------------------------------------------------------------------------
# pre-deployment worksheet


@dataclass(frozen=True)
class ThresholdEntry:
    value: Any
    justification: str = PLACEHOLDER
    legal_basis: str = PLACEHOLDER


@dataclass(frozen=True)
class WorksheetRecord:
    system_scope: str
    operator: str
    vendor: str
    control_horizons: str
    protected_services: tuple[str, ...]
    monitors: tuple[str, ...]
    thresholds: dict[str, ThresholdEntry]
    fallback_validation: str = PLACEHOLDER
    shadow_outcomes: str = PLACEHOLDER
    roster: str = PLACEHOLDER
    agreements: str = PLACEHOLDER
    dissent: str = PLACEHOLDER
    decision: str = "rejected"
    conditions: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        out = asdict(self)
        out["protected_services"] = list(self.protected_services)
        out["monitors"] = list(self.monitors)
        out["conditions"] = list(self.conditions)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "WorksheetRecord":
        try:
            thresholds = {k: ThresholdEntry(**v) for k, v in data["thresholds"].items()}
            return cls(
                **{
                    **data,
                    "protected_services": tuple(data["protected_services"]),
                    "monitors": tuple(data["monitors"]),
                    "thresholds": thresholds,
                    "conditions": tuple(data.get("conditions", ())),
                }
            )
        except (KeyError, TypeError) as exc:
            raise ArtifactError(f"malformed worksheet: {exc}") from exc


def threshold_names(config: GovernanceConfig) -> list[str]:
    names = ["disparity", "safety_risk_per_hr", "accessibility_downtime_minutes"]
    names.append("quality_min.default")
    names += [f"quality_min.{s}" for s in sorted(config.thresholds.quality)]
    return names


def _threshold_values(config: GovernanceConfig) -> dict[str, Any]:
    th = config.thresholds
    values = {
        "disparity": th.disparity,
        "safety_risk_per_hr": th.hazard_per_hr,
        "accessibility_downtime_minutes": th.downtime_minutes,
        "quality_min.default": th.quality_default,
    }
    values.update({f"quality_min.{s}": v for s, v in sorted(th.quality.items())})
    return values


def worksheet_template(config: GovernanceConfig, system_scope: str, **fields: Any) -> WorksheetRecord:
    """A worksheet with one threshold entry per configured threshold."""
    thresholds = {name: ThresholdEntry(value) for name, value in _threshold_values(config).items()}
    defaults = dict(
        operator=PLACEHOLDER,
        vendor=PLACEHOLDER,
        control_horizons=PLACEHOLDER,
        protected_services=(),
        monitors=("disparity", "hazard", "accessibility", "quality"),
    )
    defaults.update(fields)
    return WorksheetRecord(system_scope=system_scope, thresholds=thresholds, **defaults)


def validate_worksheet(record: WorksheetRecord, config: GovernanceConfig) -> list[str]:
    problems = []
    if record.decision not in DECISIONS:
        problems.append(f"decision {record.decision!r} is not one of {', '.join(DECISIONS)}")
    if record.decision == "approved_with_conditions" and not record.conditions:
        problems.append("approval with conditions lists no conditions")
    for name in threshold_names(config):
        if name not in record.thresholds:
            problems.append(f"threshold {name!r} has no entry")
    if not record.protected_services:
        problems.append("no protected services listed")
    return problems


# --------------------------------------------------------------------------
# post-incident report


@dataclass(frozen=True)
class IncidentReport:
    audit_id: str
    scenario_id: str
    trigger: tuple[dict, ...]
    immediate_action: dict
    affected: tuple[dict, ...]
    root_causes: dict = field(
        default_factory=lambda: {"technical": PLACEHOLDER, "organizational": PLACEHOLDER, "data_pipeline": PLACEHOLDER}
    )
    mitigations: tuple[str, ...] = ()
    public_notice: dict = field(default_factory=dict)
    corrective_actions: dict = field(default_factory=lambda: {"status": "open", "items": []})
    invariant_violations: tuple[str, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.invariant_violations

    def to_dict(self) -> dict:
        return {
            "audit_id": self.audit_id,
            "scenario_id": self.scenario_id,
            "trigger": list(self.trigger),
            "immediate_action": self.immediate_action,
            "affected": list(self.affected),
            "root_causes": self.root_causes,
            "mitigations": list(self.mitigations),
            "public_notice": self.public_notice,
            "corrective_actions": self.corrective_actions,
            "invariant_violations": list(self.invariant_violations),
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())


REPORT_FIELDS = tuple(IncidentReport.__dataclass_fields__)


def _find(records: Iterable[AuditRecord], audit_id: str) -> tuple[AuditRecord | None, AuditRecord | None]:
    for span in pair_spans(records):
        if span.audit_id == audit_id:
            return span.start, span.end
    return None, None


def generate_incident_report(
    audit: AuditRecord | str,
    records: Sequence[AuditRecord],
    run: SimulationReport | None = None,
    config: GovernanceConfig | None = None,
) -> IncidentReport:
    """Post-incident report for one override, filled from its records and run.

    Raises :class:`IncidentNotReportableError` while the override is open.
    A duration beyond the level's limit is reported in
    ``invariant_violations`` rather than raised, so the breach is on record.
    """
    config = config or default_config()
    audit_id = audit if isinstance(audit, str) else audit.audit_id
    start, end = _find(records, audit_id)
    if start is None:
        raise ArtifactError(f"no override_started record with audit id {audit_id!r}")
    if end is None:
        raise IncidentNotReportableError(f"override {audit_id} is still open")
    level = config.levels[Level(start.level)]
    duration = end.ended_at - start.started_at
    limit = level.max_duration
    violations = []
    if duration > limit:
        violations.append(
            f"override ran {_hours(duration):g} h at {start.level}, beyond the {_hours(limit):g} h limit"
        )
    if duration < timedelta(0):
        violations.append("override ended before it started")
    affected = []
    for v in start.trigger:
        affected.append(
            {
                "monitor": v.monitor,
                "group_or_service": v.subject,
                "observed": v.to_dict()["observed"],
                "bound": v.bound,
            }
        )
    action = {
        "level": start.level,
        "authority": start.authority,
        "fallback": start.fallback_name,
        "started_at": isoformat(start.started_at),
        "ended_at": isoformat(end.ended_at),
        "end_reason": end.end_reason,
        "duration_hours": round(_hours(duration), 6),
        "max_duration_hours": _hours(limit),
    }
    notice = {"dates": [isoformat(start.timestamp)], "languages": [PLACEHOLDER], "contacts": [PLACEHOLDER]}
    if run is not None:
        for n in run.notices:
            if n.get("audit_id") == audit_id:
                notice["notice_id"] = n["notice_id"]
        if run.metrics:
            affected.append({"run_metrics": dict(run.metrics)})
    return IncidentReport(
        audit_id=audit_id,
        scenario_id=start.scenario_id,
        trigger=tuple(v.to_dict() for v in start.trigger),
        immediate_action=action,
        affected=tuple(affected),
        public_notice=notice,
        invariant_violations=tuple(violations),
    )


def _hours(d: timedelta) -> float:
    return d.total_seconds() / 3600.0


def validate_incident_report(report: dict | IncidentReport, records: Sequence[AuditRecord]) -> list[str]:
    """Schema check plus the back-reference to a real override record."""
    data = report.to_dict() if isinstance(report, IncidentReport) else report
    problems = [f"missing field {name!r}" for name in REPORT_FIELDS if name not in data]
    if problems:
        return problems
    if list(data)[: len(REPORT_FIELDS)] != list(REPORT_FIELDS):
        problems.append("fields out of order")
    if not any(r.audit_id == data["audit_id"] and r.event == START for r in records):
        problems.append(f"audit id {data['audit_id']!r} matches no override_started record")
    for key in ("technical", "organizational", "data_pipeline"):
        if key not in data["root_causes"]:
            problems.append(f"root cause dimension {key!r} missing")
    for key in ("level", "fallback", "duration_hours"):
        if key not in data["immediate_action"]:
            problems.append(f"immediate action lacks {key!r}")
    return problems


def reportable_ids(records: Sequence[AuditRecord]) -> list[str]:
    return [s.audit_id for s in pair_spans(records) if s.closed]


def write_incident_reports(workspace: str | Path, reports: Iterable[IncidentReport]) -> list[Path]:
    paths = []
    for r in reports:
        path = Path(workspace) / "reports" / "incidents" / f"{r.audit_id}.json"
        write_atomic(path, r.to_json())
        paths.append(path)
    return paths


def write_notices(workspace: str | Path, notices: Iterable[dict]) -> list[Path]:
    paths = []
    for n in notices:
        path = Path(workspace) / "notices" / f"{n['notice_id']}.json"
        write_atomic(path, dumps(n))
        paths.append(path)
    return paths


# --------------------------------------------------------------------------
# review gate


@dataclass(frozen=True)
class ReviewCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ReviewGateResult:
    checks: tuple[ReviewCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def check(self, name: str) -> ReviewCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _doc_check(root: Path, stem: str, required: bool) -> ReviewCheck:
    found = sorted(p.name for p in (root / "docs").glob(f"{stem}.*") if p.is_file())
    if found:
        return ReviewCheck(stem, True, f"docs/{found[0]}")
    if not required:
        return ReviewCheck(stem, True, "not required")
    return ReviewCheck(stem, False, f"docs/{stem}.* not found")


def stage_check_name(stage: str) -> str:
    return f"pre_deploy.{stage}"


def run_review_gate(
    workspace: str | Path,
    config: GovernanceConfig,
    domains: Sequence[str] = DOMAINS,
) -> ReviewGateResult:
    """Check the workspace against the documentation and review requirements in ``config``."""
    root = Path(workspace)
    if not root.is_dir():
        raise FileNotFoundError(f"workspace {root} is not a readable directory")
    checks = [
        _doc_check(root, "model_card", config.documentation.model_card),
        _doc_check(root, "datasheet", config.documentation.datasheet),
    ]
    for stage in config.reviews.pre_deploy:
        marker = root / "reviews" / f"{stage}.done"
        if marker.is_file():
            stamp = marker.read_text(encoding="utf-8").strip()
            checks.append(ReviewCheck(stage_check_name(stage), True, stamp or "marker present"))
        else:
            checks.append(ReviewCheck(stage_check_name(stage), False, f"reviews/{stage}.done not found"))
    problems = [str(p) for d in domains for p in validate_cross_references(config, d)]
    checks.append(ReviewCheck("cross_references", not problems, "; ".join(problems)))
    return ReviewGateResult(tuple(checks))


def make_fixture_workspace(workspace: str | Path, config: GovernanceConfig, stamp: datetime | None = None) -> Path:
    """Write a complete workspace: documentation stubs and every stage marker."""
    root = Path(workspace)
    stamp = stamp or datetime(2025, 1, 1)
    write_atomic(root / "docs" / "model_card.md", "# Model card\n\nControl policy documentation.\n")
    write_atomic(root / "docs" / "datasheet.md", "# Datasheet\n\nTraining and calibration data.\n")
    for stage in config.reviews.pre_deploy:
        write_atomic(root / "reviews" / f"{stage}.done", isoformat(stamp) + "\n")
    return root


# --------------------------------------------------------------------------
# sensitivity sweeps


SWEEP_PARAMETERS = {"tau_D": "disparity", "tau_A": "downtime_minutes"}


def _with_threshold(config: GovernanceConfig, parameter: str, value: float) -> GovernanceConfig:
    if parameter not in SWEEP_PARAMETERS:
        raise ArtifactError(f"unknown sweep parameter {parameter!r}; expected one of {sorted(SWEEP_PARAMETERS)}")
    if parameter == "tau_D" and not value > 0:
        raise ArtifactError(f"tau_D must be positive, got {value!r}")
    if parameter == "tau_A" and not 0 < value <= 1440:
        raise ArtifactError(f"tau_A must lie in (0, 1440] minutes, got {value!r}")
    th = replace(config.thresholds, **{SWEEP_PARAMETERS[parameter]: value})
    return replace(config, thresholds=th)


def sensitivity_sweep(
    case: Literal["power", "building", "traffic"],
    parameter: str,
    values: Sequence[float],
    config: GovernanceConfig | None = None,
    scenario: Any = None,
    seed: int = 0,
) -> list[dict]:
    """Run the gated case once per value: (value, harm metric, efficiency metric)."""
    from .sim import building, power, traffic

    config = config or default_config()
    rows = []
    for value in values:
        cfg = _with_threshold(config, parameter, value)
        if case == "power":
            r = power.run_power_case(scenario or power.case1_fixture(seed), cfg)
            rows.append(
                {
                    parameter: value,
                    "gated_D": None if r.gated.disparity is None else round(r.gated.disparity, 6),
                    "max_window_D": round(max(r.window_disparities(), default=0.0), 6),
                    "ENS_total": round(r.gated.ens_total, 6),
                    "overrides": r.run.override_count,
                }
            )
        elif case == "building":
            r = building.run_building_case(scenario or building.cold_day_fixture(seed), cfg)
            rows.append(
                {
                    parameter: value,
                    "discomfort_hours": r.gated.discomfort_hours_protected,
                    "energy_delta_kwh": round(r.gated.energy_delta_kwh, 3),
                    "trigger_time": isoformat(r.trigger_time) if r.trigger_time else None,
                    "overrides": r.run.override_count,
                }
            )
        elif case == "traffic":
            r = traffic.run_traffic_case(scenario or traffic.default_fixture(seed), cfg)
            rows.append(
                {
                    parameter: value,
                    "ped_median_wait": round(r.gated.report.ped_wait_median, 3),
                    "veh_mean_delay": round(r.gated.report.vehicle_delay_mean, 3),
                    "overrides": r.gated.run.override_count,
                }
            )
        else:
            raise ArtifactError(f"unknown case {case!r}")
    return rows
