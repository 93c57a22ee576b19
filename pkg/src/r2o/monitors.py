"""Monitor computations and threshold evaluation.

Disparity is the ratio of normalized harm (harm / baseline) between a
designated group and its complement. Hazard and service quality are
pass-through proxies supplied by each simulator.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Iterable, Literal, Mapping, Sequence

from .config import Thresholds

MINUTES_PER_DAY = 1440.0
DOWNTIME_WINDOW = timedelta(hours=24)

MonitorName = Literal["disparity", "hazard", "accessibility", "quality"]


class MonitorInputError(ValueError):
    pass


@dataclass(frozen=True)
class GroupOutcome:
    group_id: str
    harm: float
    baseline: float
    protected: bool = False


@dataclass(frozen=True)
class MonitorVector:
    t: int
    disparity: float = 1.0
    hazard: float = 0.0
    downtime: Mapping[str, float] = field(default_factory=dict)
    quality: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class Violation:
    monitor: MonitorName
    observed: float
    bound: float
    direction: Literal["exceeds", "falls_below"]
    subject: str | None = None

    def to_dict(self) -> dict:
        return {
            "monitor": self.monitor,
            "observed": _json_number(self.observed),
            "bound": self.bound,
            "direction": self.direction,
            "subject": self.subject,
        }


def _json_number(value: float) -> float | str:
    return "inf" if math.isinf(value) else value


def _rate_ratio(h_g: float, b_g: float, h_c: float, b_c: float) -> float:
    if b_g <= 0 or b_c <= 0:
        raise MonitorInputError("baselines must be positive to compute disparity")
    if h_g < 0 or h_c < 0:
        raise MonitorInputError("harm must be nonnegative")
    if h_c == 0:
        # no harm on either side is no disparity; harm only on the designated
        # group is unbounded disparity
        return 1.0 if h_g == 0 else math.inf
    return (h_g / b_g) / (h_c / b_c)


def disparity_ratio(group: GroupOutcome, complement: GroupOutcome) -> float:
    """Normalized-harm ratio of ``group`` against ``complement``.

    Returns ``math.inf`` when only the designated group bears harm and ``1.0``
    when neither does.
    """
    return _rate_ratio(group.harm, group.baseline, complement.harm, complement.baseline)


def window_disparity(series: Sequence[tuple[GroupOutcome, GroupOutcome]]) -> float:
    """Disparity of a whole window: sum harms and baselines, then divide."""
    if not series:
        raise MonitorInputError("window is empty")
    h_g = math.fsum(g.harm for g, _ in series)
    b_g = math.fsum(g.baseline for g, _ in series)
    h_c = math.fsum(c.harm for _, c in series)
    b_c = math.fsum(c.baseline for _, c in series)
    return _rate_ratio(h_g, b_g, h_c, b_c)


def accessibility_downtime(
    events: Iterable[tuple[datetime, datetime]],
    now: datetime,
    window: timedelta = DOWNTIME_WINDOW,
) -> float:
    """Minutes of outage inside the trailing ``window`` ending at ``now``.

    Overlapping intervals are merged before summing.
    """
    start = now - window
    clipped = []
    for a, b in events:
        if b < a:
            raise MonitorInputError(f"reversed interval {a} > {b}")
        lo, hi = max(a, start), min(b, now)
        if hi > lo:
            clipped.append((lo, hi))
    clipped.sort()
    total = timedelta(0)
    cur_lo = cur_hi = None
    for lo, hi in clipped:
        if cur_hi is None or lo > cur_hi:
            if cur_hi is not None:
                total += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    if cur_hi is not None:
        total += cur_hi - cur_lo
    return total.total_seconds() / 60.0


def hazard_rate(proxy: float) -> float:
    """Per-hour hazard rate; simulators supply their own proxy."""
    if not proxy >= 0:
        raise MonitorInputError(f"hazard proxy must be nonnegative, got {proxy!r}")
    return float(proxy)


def evaluate_thresholds(m: MonitorVector, tau: Thresholds) -> list[Violation]:
    out = []
    if m.disparity >= tau.disparity:
        out.append(Violation("disparity", m.disparity, tau.disparity, "exceeds"))
    if m.hazard >= tau.hazard_per_hr:
        out.append(Violation("hazard", m.hazard, tau.hazard_per_hr, "exceeds"))
    for group in sorted(m.downtime):
        minutes = m.downtime[group]
        if minutes >= tau.downtime_minutes:
            out.append(Violation("accessibility", minutes, tau.downtime_minutes, "exceeds", group))
    for service in sorted(m.quality):
        floor = tau.quality_floor(service)
        if m.quality[service] <= floor:
            out.append(Violation("quality", m.quality[service], floor, "falls_below", service))
    return out


def monitors_to_csv(vectors: Sequence[MonitorVector]) -> str:
    """Delimited export: t, D_t, R_t, one A_t column per group, one Q_t per service."""
    groups = sorted({g for m in vectors for g in m.downtime})
    services = sorted({s for m in vectors for s in m.quality})
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "D_t", "R_t", *[f"A_t[{g}]" for g in groups], *[f"Q_t[{s}]" for s in services]])
    for m in vectors:
        writer.writerow(
            [
                m.t,
                _fmt(m.disparity),
                _fmt(m.hazard),
                *[_fmt(m.downtime[g]) if g in m.downtime else "" for g in groups],
                *[_fmt(m.quality[s]) if s in m.quality else "" for s in services],
            ]
        )
    return buf.getvalue()


def _fmt(value: float) -> str:
    return "inf" if math.isinf(value) else repr(round(value, 10))
