"""Append-only override audit log and public notices.

One ``override_started`` record is written when an override engages and one
``override_ended`` record when it expires, is superseded by escalation, or
the run ends. Records serialize to JSON lines with a fixed key order; those
key names are part of the on-disk contract.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Iterator, Literal, Sequence

from .monitors import Violation

START = "override_started"
END = "override_ended"

START_FIELDS = (
    "audit_id",
    "event",
    "timestamp",
    "scenario_id",
    "policy_id",
    "policy_version",
    "mode",
    "level",
    "authority",
    "fallback_name",
    "trigger",
    "started_at",
    "expires_at",
    "review_opened",
    "notes",
)
END_FIELDS = ("audit_id", "event", "timestamp", "scenario_id", "level", "ended_at", "end_reason")


def isoformat(ts: datetime) -> str:
    return ts.isoformat().replace("+00:00", "Z")


@dataclass(frozen=True)
class AuditRecord:
    audit_id: str
    event: Literal["override_started", "override_ended"]
    timestamp: datetime
    scenario_id: str
    level: str
    policy_id: str = ""
    policy_version: str = ""
    mode: str = "actuated"
    authority: str = ""
    fallback_name: str = ""
    trigger: tuple[Violation, ...] = ()
    started_at: datetime | None = None
    expires_at: datetime | None = None
    review_opened: bool = False
    notes: tuple[str, ...] = ()
    ended_at: datetime | None = None
    end_reason: str = ""

    def to_dict(self) -> dict:
        values = {
            "audit_id": self.audit_id,
            "event": self.event,
            "timestamp": isoformat(self.timestamp),
            "scenario_id": self.scenario_id,
            "policy_id": self.policy_id,
            "policy_version": self.policy_version,
            "mode": self.mode,
            "level": self.level,
            "authority": self.authority,
            "fallback_name": self.fallback_name,
            "trigger": [v.to_dict() for v in self.trigger],
            "started_at": isoformat(self.started_at) if self.started_at else None,
            "expires_at": isoformat(self.expires_at) if self.expires_at else None,
            "review_opened": self.review_opened,
            "notes": list(self.notes),
            "ended_at": isoformat(self.ended_at) if self.ended_at else None,
            "end_reason": self.end_reason,
        }
        keys = START_FIELDS if self.event == START else END_FIELDS
        return {k: values[k] for k in keys}

    @classmethod
    def from_dict(cls, data: dict) -> "AuditRecord":
        def ts(key: str) -> datetime | None:
            raw = data.get(key)
            return datetime.fromisoformat(raw.replace("Z", "+00:00")) if raw else None

        trigger = tuple(
            Violation(
                v["monitor"],
                float(v["observed"]),
                float(v["bound"]),
                v["direction"],
                v.get("subject"),
            )
            for v in data.get("trigger", ())
        )
        return cls(
            audit_id=data["audit_id"],
            event=data["event"],
            timestamp=ts("timestamp"),
            scenario_id=data["scenario_id"],
            level=data["level"],
            policy_id=data.get("policy_id", ""),
            policy_version=data.get("policy_version", ""),
            mode=data.get("mode", "actuated"),
            authority=data.get("authority", ""),
            fallback_name=data.get("fallback_name", ""),
            trigger=trigger,
            started_at=ts("started_at"),
            expires_at=ts("expires_at"),
            review_opened=bool(data.get("review_opened", False)),
            notes=tuple(data.get("notes", ())),
            ended_at=ts("ended_at"),
            end_reason=data.get("end_reason", ""),
        )


@dataclass(frozen=True)
class OverrideSpan:
    """A started record joined with its end record, if any."""

    start: AuditRecord
    end: AuditRecord | None

    @property
    def audit_id(self) -> str:
        return self.start.audit_id

    @property
    def closed(self) -> bool:
        return self.end is not None

    def covers(self, ts: datetime) -> bool:
        if ts < self.start.started_at:
            return False
        return self.end is None or ts < self.end.ended_at


@dataclass
class AuditLog:
    """In-memory append-only log, optionally mirrored to a JSONL file."""

    path: Path | None = None
    records: list[AuditRecord] = field(default_factory=list)

    def append(self, record: AuditRecord) -> None:
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(dumps_record(record) + "\n")

    def __iter__(self) -> Iterator[AuditRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def spans(self) -> list[OverrideSpan]:
        return pair_spans(self.records)

    def to_jsonl(self) -> str:
        return "".join(dumps_record(r) + "\n" for r in self.records)


def dumps_record(record: AuditRecord) -> str:
    return json.dumps(record.to_dict(), separators=(",", ":"), allow_nan=False)


def read_jsonl(path: str | os.PathLike[str]) -> list[AuditRecord]:
    with open(path, encoding="utf-8") as fh:
        return [AuditRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def pair_spans(records: Iterable[AuditRecord]) -> list[OverrideSpan]:
    starts: dict[str, AuditRecord] = {}
    ends: dict[str, AuditRecord] = {}
    for r in records:
        (starts if r.event == START else ends)[r.audit_id] = r
    return [OverrideSpan(s, ends.get(aid)) for aid, s in starts.items()]


def coverage_errors(fallback_times: Sequence[datetime], records: Iterable[AuditRecord]) -> list[str]:
    """Check each fallback-actuated step is covered by exactly one override."""
    spans = pair_spans(records)
    errors = []
    for ts in fallback_times:
        n = sum(1 for s in spans if s.covers(ts))
        if n != 1:
            errors.append(f"{isoformat(ts)} covered by {n} override records")
    return errors


def write_atomic(path: str | os.PathLike[str], text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


_MONITOR_TEXT = {
    "disparity": "the ratio of harm borne by the protected group to harm borne by everyone else",
    "hazard": "the predicted safety hazard rate per hour",
    "accessibility": "minutes of accessibility loss in the last 24 hours",
    "quality": "the service-quality index",
}


def public_notice(record: AuditRecord, fallback_description: str = "") -> dict:
    """Plain-language notice for an override start record."""
    reasons = []
    thresholds = []
    for v in record.trigger:
        what = _MONITOR_TEXT[v.monitor]
        who = f" ({v.subject})" if v.subject else ""
        verb = "rose to" if v.direction == "exceeds" else "fell to"
        observed = "an unbounded value" if v.observed == float("inf") else f"{v.observed:.4g}"
        reasons.append(f"{what}{who} {verb} {observed}")
        limit = "at most" if v.direction == "exceeds" else "above"
        thresholds.append(f"{v.monitor}{who}: must stay {limit} {v.bound:g}")
    return {
        "notice_id": f"notice-{record.audit_id}",
        "audit_id": record.audit_id,
        "issued_at": isoformat(record.timestamp),
        "scenario_id": record.scenario_id,
        "action": f"{record.level} override ({record.authority.replace('_', ' ')})",
        "rationale": "; ".join(reasons),
        "thresholds": thresholds,
        "fallback": record.fallback_name,
        "fallback_description": fallback_description,
        "in_effect_until": isoformat(record.expires_at) if record.expires_at else None,
        "review": "a post-incident review has been opened" if record.review_opened else "",
    }
