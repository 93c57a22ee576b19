"""The override gate.

Each step the gate asks the control policy for its action, evaluates the
monitors against the configured thresholds and, when any bound is crossed,
maps the violations to an override level, substitutes that level's validated
fallback, starts the level's timer and logs the evidence. While an override
is active the fallback keeps control until the timer runs out, whatever the
monitors say, unless a violation calls for a higher level.

:func:`gate_step` is the pure transition; :class:`Gate` owns the running
state for one scenario run (override state, trigger history, audit log).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Any, Callable, Literal, Mapping, Protocol, Sequence

from .audit import END, START, AuditLog, AuditRecord, coverage_errors, isoformat, pair_spans, public_notice
from .config import GovernanceConfig, Level, validate_cross_references
from .monitors import MonitorVector, Violation, evaluate_thresholds

logger = logging.getLogger(__name__)

Mode = Literal["actuated", "shadow"]
EQUITY_MONITORS = frozenset({"disparity", "accessibility", "quality"})
ALL_MONITORS = frozenset({"disparity", "hazard", "accessibility", "quality"})


class InvariantError(AssertionError):
    """A run broke one of its own guarantees (a bug, not bad input)."""


class GatingConfigError(RuntimeError):
    """A fallback could not be resolved. The gate fails closed."""

    def __init__(self, message: str, last_safe_action: Any = None):
        super().__init__(message)
        self.last_safe_action = last_safe_action


class ControlPolicy(Protocol):
    policy_id: str
    version: str

    def act(self, state: Any) -> Any: ...


Fallback = Callable[[Any], Any]


@dataclass(frozen=True)
class EscalationRule:
    monitors: frozenset[str]
    level: Level
    persistence: int = 0

    def matches(self, violations: Sequence[Violation]) -> bool:
        return any(v.monitor in self.monitors for v in violations)


@dataclass(frozen=True)
class EscalationMap:
    """Ordered rules; the first matching rule wins."""

    rules: tuple[EscalationRule, ...]

    def __post_init__(self) -> None:
        covered = set()
        for rule in self.rules:
            if rule.persistence == 0:
                covered |= rule.monitors
        if not ALL_MONITORS <= covered:
            missing = ", ".join(sorted(ALL_MONITORS - covered))
            raise ValueError(f"escalation map does not cover monitors: {missing}")


def default_escalation_map(persistence_windows: int = 2) -> EscalationMap:
    return EscalationMap(
        (
            EscalationRule(EQUITY_MONITORS, Level.L3, persistence=persistence_windows),
            EscalationRule(EQUITY_MONITORS, Level.L2),
            EscalationRule(frozenset({"hazard"}), Level.L1),
        )
    )


def escalate(trigger_history: Sequence[Sequence[Violation]], escalation: EscalationMap) -> Level:
    """Level for the latest violation list in ``trigger_history``.

    Earlier entries are the triggers of immediately preceding overrides that
    ran their full window; a persistence rule fires when at least
    ``persistence`` of them in a row share one of its monitors with the
    latest list.
    """
    if not trigger_history or not trigger_history[-1]:
        raise ValueError("latest violation list is empty")
    latest = trigger_history[-1]
    for rule in escalation.rules:
        if not rule.matches(latest):
            continue
        if rule.persistence == 0:
            return rule.level
        kinds = {v.monitor for v in latest} & rule.monitors
        run = 0
        for earlier in reversed(trigger_history[:-1]):
            if not kinds & {v.monitor for v in earlier}:
                break
            run += 1
        if run >= rule.persistence:
            return rule.level
    raise AssertionError("escalation map is total")


@dataclass(frozen=True)
class OverrideState:
    active: bool = False
    level: Level | None = None
    fallback_name: str | None = None
    started_at: datetime | None = None
    expires_at: datetime | None = None
    trigger: tuple[Violation, ...] = ()
    review_opened: bool = False
    audit_id: str | None = None


INACTIVE = OverrideState()


def expire_overrides(override: OverrideState, now: datetime) -> OverrideState:
    if override.active and now >= override.expires_at:
        return replace(override, active=False)
    return override


@dataclass(frozen=True)
class GateDecision:
    action_source: Literal["policy", "fallback"]
    applied_action: Any
    override: OverrideState
    candidate_action: Any = None
    violations: tuple[Violation, ...] = ()
    onset: bool = False
    would_be_source: Literal["policy", "fallback"] = "policy"
    audit: AuditRecord | None = None


def merge_violations(monitors: Sequence[MonitorVector], config: GovernanceConfig) -> tuple[Violation, ...]:
    """Violations from all monitor vectors, one per (monitor, subject)."""
    seen: dict[tuple[str, str | None], Violation] = {}
    for m in monitors:
        for v in evaluate_thresholds(m, config.thresholds):
            seen.setdefault((v.monitor, v.subject), v)
    return tuple(seen.values())


def gate_step(
    policy: ControlPolicy,
    fallbacks: Mapping[str, Fallback],
    state: Any,
    monitors: MonitorVector | Sequence[MonitorVector],
    config: GovernanceConfig,
    override: OverrideState,
    now: datetime,
    *,
    domain: str,
    escalation: EscalationMap | None = None,
    history: Sequence[Sequence[Violation]] = (),
    mode: Mode = "actuated",
    last_safe_action: Any = None,
) -> tuple[GateDecision, OverrideState]:
    """One pass of the gating loop.

    ``history`` holds the triggers of the preceding back-to-back completed
    overrides and feeds persistence escalation. In shadow mode the override
    state evolves exactly as it would when actuated, but the policy action
    is always the one applied.
    """
    if escalation is None:
        escalation = default_escalation_map(config.persistence_windows)
    if isinstance(monitors, MonitorVector):
        monitors = [monitors]

    override = expire_overrides(override, now)
    candidate = policy.act(state)
    violations = merge_violations(monitors, config)

    onset = False
    if violations:
        level = escalate([*history, violations], escalation)
        if not override.active or level.rank > override.level.rank:
            try:
                name = config.resolve_fallback(level, domain)
            except KeyError as exc:
                raise GatingConfigError(str(exc), last_safe_action) from exc
            if name not in fallbacks:
                raise GatingConfigError(f"no validated fallback bound for {name!r}", last_safe_action)
            override = OverrideState(
                active=True,
                level=level,
                fallback_name=name,
                started_at=now,
                expires_at=now + config.max_duration(level),
                trigger=violations,
                review_opened=True,
            )
            onset = True

    if override.active:
        fallback_action = fallbacks[override.fallback_name](state)
        would_be = "fallback"
    else:
        fallback_action = None
        would_be = "policy"

    if mode == "actuated" and override.active:
        source, applied = "fallback", fallback_action
    else:
        source, applied = "policy", candidate
    decision = GateDecision(
        action_source=source,
        applied_action=applied,
        override=override,
        candidate_action=candidate,
        violations=violations,
        onset=onset,
        would_be_source=would_be,
    )
    return decision, override


@dataclass(frozen=True)
class StepTrace:
    t: int
    time: datetime
    action_source: str
    would_be_source: str
    level: str | None
    fallback_name: str | None
    audit_id: str | None
    violations: tuple[Violation, ...]
    onset: bool

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "time": isoformat(self.time),
            "action_source": self.action_source,
            "would_be_source": self.would_be_source,
            "level": self.level,
            "fallback_name": self.fallback_name,
            "audit_id": self.audit_id,
            "violations": [v.to_dict() for v in self.violations],
            "onset": self.onset,
        }


class Gate:
    """Runs :func:`gate_step` over a scenario and keeps the evidence."""

    def __init__(
        self,
        *,
        config: GovernanceConfig,
        domain: str,
        policy: ControlPolicy,
        fallbacks: Mapping[str, Fallback],
        scenario_id: str,
        mode: Mode = "actuated",
        escalation: EscalationMap | None = None,
        audit: AuditLog | None = None,
        fallback_descriptions: Mapping[str, str] | None = None,
    ):
        problems = validate_cross_references(config, domain)
        if problems:
            raise GatingConfigError("; ".join(str(p) for p in problems))
        self.config = config
        self.domain = domain
        self.policy = policy
        self.fallbacks = fallbacks
        self.scenario_id = scenario_id
        self.mode = mode
        self.escalation = escalation or default_escalation_map(config.persistence_windows)
        self.audit = audit if audit is not None else AuditLog()
        self.fallback_descriptions = dict(fallback_descriptions or {})
        self.override = INACTIVE
        # triggers of back-to-back overrides that ran their full window
        self.completed: list[tuple[Violation, ...]] = []
        self.trace: list[StepTrace] = []
        self.monitor_trace: list[MonitorVector] = []
        self.notices: list[dict] = []
        self._pending_notes: list[str] = []
        self._seq = 0
        self._last_safe_action: Any = None
        self._t = 0

    def note(self, text: str) -> None:
        """Attach a note to the next override record (e.g. feasibility relaxations)."""
        self._pending_notes.append(text)

    def _close(self, now: datetime, reason: str) -> None:
        ov = self.override
        self.audit.append(
            AuditRecord(
                audit_id=ov.audit_id,
                event=END,
                timestamp=now,
                scenario_id=self.scenario_id,
                level=ov.level.value,
                ended_at=now,
                end_reason=reason,
            )
        )

    def step(self, state: Any, monitors: MonitorVector | Sequence[MonitorVector], now: datetime) -> GateDecision:
        if isinstance(monitors, MonitorVector):
            monitors = [monitors]
        before = self.override
        current = expire_overrides(before, now)
        just_expired = before.active and not current.active
        if just_expired:
            self._close(before.expires_at, "expired")
            self.completed.append(before.trigger)

        decision, new = gate_step(
            self.policy,
            self.fallbacks,
            state,
            monitors,
            self.config,
            current,
            now,
            domain=self.domain,
            escalation=self.escalation,
            history=self.completed if (just_expired or current.active) else (),
            mode=self.mode,
            last_safe_action=self._last_safe_action,
        )

        if decision.onset:
            if current.active:
                self._close(now, "escalated")
            elif not just_expired:
                self.completed = []
            new = self._open(new, now)
            decision = replace(decision, override=new, audit=self.audit.records[-1])
        elif not new.active:
            # a step without an override breaks any back-to-back chain
            self.completed = []

        self.override = new
        if decision.action_source == "fallback":
            self._last_safe_action = decision.applied_action
        self.trace.append(
            StepTrace(
                t=self._t,
                time=now,
                action_source=decision.action_source,
                would_be_source=decision.would_be_source,
                level=new.level.value if new.active else None,
                fallback_name=new.fallback_name if new.active else None,
                audit_id=new.audit_id if new.active else None,
                violations=decision.violations,
                onset=decision.onset,
            )
        )
        self.monitor_trace.append(monitors[0] if len(monitors) == 1 else _combine(self._t, monitors))
        self._t += 1
        return decision

    def _open(self, new: OverrideState, now: datetime) -> OverrideState:
        self._seq += 1
        audit_id = f"{self.scenario_id}-{self._seq:04d}"
        new = replace(new, audit_id=audit_id)
        record = AuditRecord(
            audit_id=audit_id,
            event=START,
            timestamp=now,
            scenario_id=self.scenario_id,
            level=new.level.value,
            policy_id=self.policy.policy_id,
            policy_version=self.policy.version,
            mode=self.mode,
            authority=self.config.levels[new.level].authority,
            fallback_name=new.fallback_name,
            trigger=new.trigger,
            started_at=new.started_at,
            expires_at=new.expires_at,
            review_opened=new.review_opened,
            notes=tuple(self._pending_notes),
        )
        self._pending_notes.clear()
        self.audit.append(record)
        if self.mode == "actuated":
            self.notices.append(public_notice(record, self.fallback_descriptions.get(new.fallback_name, "")))
        logger.info(
            "override %s %s at %s (%s)",
            audit_id,
            new.level.value,
            isoformat(now),
            ", ".join(v.monitor for v in new.trigger),
        )
        return new

    def finish(self, now: datetime) -> None:
        """Close any override still running when the scenario ends."""
        if self.override.active:
            if now >= self.override.expires_at:
                self._close(self.override.expires_at, "expired")
            else:
                self._close(now, "run_end")
            self.override = replace(self.override, active=False)

    # summaries -------------------------------------------------------------

    def fallback_times(self) -> list[datetime]:
        return [s.time for s in self.trace if s.action_source == "fallback"]

    def would_be_triggers(self) -> int:
        return sum(1 for s in self.trace if s.onset)

    def longest_duration_ok(self) -> bool:
        for span in self.audit.spans():
            level = Level(span.start.level)
            if span.start.expires_at - span.start.started_at > self.config.max_duration(level):
                return False
            if span.end is not None and span.end.ended_at - span.start.started_at > self.config.max_duration(level):
                return False
        return True

    def trace_dicts(self) -> list[dict]:
        return [s.to_dict() for s in self.trace]


def _combine(t: int, monitors: Sequence[MonitorVector]) -> MonitorVector:
    """Worst-case view across observed and predicted vectors, for export."""
    downtime: dict[str, float] = {}
    quality: dict[str, float] = {}
    for m in monitors:
        for k, v in m.downtime.items():
            downtime[k] = max(downtime.get(k, 0.0), v)
        for k, v in m.quality.items():
            quality[k] = min(quality.get(k, 1.0), v)
    return MonitorVector(
        t=t,
        disparity=max(m.disparity for m in monitors),
        hazard=max(m.hazard for m in monitors),
        downtime=downtime,
        quality=quality,
    )


def dumps(payload: Any) -> str:
    """Deterministic JSON used for every report artifact."""
    return json.dumps(payload, indent=2, sort_keys=False, allow_nan=False) + "\n"


@dataclass
class SimulationReport:
    scenario_id: str
    domain: str
    mode: str
    policy_id: str
    policy_version: str
    metrics: dict[str, Any]
    trace: list[dict] = field(default_factory=list)
    audit: list[AuditRecord] = field(default_factory=list)
    notices: list[dict] = field(default_factory=list)
    monitors: list[MonitorVector] = field(default_factory=list)

    @classmethod
    def from_gate(cls, gate: Gate, metrics: dict[str, Any]) -> "SimulationReport":
        return cls(
            scenario_id=gate.scenario_id,
            domain=gate.domain,
            mode=gate.mode,
            policy_id=gate.policy.policy_id,
            policy_version=gate.policy.version,
            metrics=metrics,
            trace=gate.trace_dicts(),
            audit=list(gate.audit.records),
            notices=list(gate.notices),
            monitors=list(gate.monitor_trace),
        )

    @property
    def fallback_steps(self) -> int:
        return sum(1 for s in self.trace if s["action_source"] == "fallback")

    @property
    def would_be_triggers(self) -> int:
        return sum(1 for s in self.trace if s["onset"])

    @property
    def override_count(self) -> int:
        return sum(1 for r in self.audit if r.event == START)

    def to_dict(self, include_trace: bool = True) -> dict:
        out = {
            "scenario_id": self.scenario_id,
            "domain": self.domain,
            "mode": self.mode,
            "policy_id": self.policy_id,
            "policy_version": self.policy_version,
            "metrics": self.metrics,
            "override_count": self.override_count,
            "fallback_steps": self.fallback_steps,
            "would_be_triggers": self.would_be_triggers,
            "notices": {n["audit_id"]: n["notice_id"] for n in self.notices},
        }
        if include_trace:
            out["trace"] = self.trace
        return out

    def to_json(self, include_trace: bool = True) -> str:
        return dumps(self.to_dict(include_trace))

    def audit_jsonl(self) -> str:
        log = AuditLog(records=list(self.audit))
        return log.to_jsonl()

    def contract_errors(self, config: GovernanceConfig) -> list[str]:
        """Breaches of the gating guarantees in this run.

        Every fallback step must fall inside exactly one logged override, no
        closed override may outlast its level, and a shadow run may never
        actuate a fallback.
        """
        times = [datetime.fromisoformat(s["time"]) for s in self.trace if s["action_source"] == "fallback"]
        errors = coverage_errors(times, self.audit)
        for span in pair_spans(self.audit):
            if span.end is None:
                continue
            limit = config.max_duration(Level(span.start.level))
            if span.end.ended_at - span.start.started_at > limit:
                errors.append(f"override {span.audit_id} outlasted its {span.start.level} limit")
        if self.mode == "shadow" and self.fallback_steps:
            errors.append(f"shadow run actuated the fallback on {self.fallback_steps} steps")
        return errors
