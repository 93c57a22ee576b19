"""Load shedding over one day at 15-minute resolution.

Two curtailment policies are compared on the same shortfall:

* the baseline merit-order dispatch, which sheds the cheapest-weighted
  feeders first and, with the protected group weighted cheaper, lands most
  of the shortfall on protected customers;
* the equity-rotation fallback, which keeps each step's total curtailment
  but splits it so the protected group's normalized harm never exceeds
  ``disparity_cap`` times the general group's, shielding reserved
  clinic/elevator feeders above their minimum service.

Because the fallback caps every step, the cap also bounds the disparity
summed over any window it is active for.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Sequence

import numpy as np

from ..config import GovernanceConfig
from ..gating import Gate, InvariantError, Mode, SimulationReport
from ..monitors import GroupOutcome, MonitorVector, hazard_rate, window_disparity

logger = logging.getLogger(__name__)

STEPS = 96
STEP = timedelta(minutes=15)
PROTECTED = "protected"
GENERAL = "general"
EPS = 1e-12


class InfeasibleDispatchError(ValueError):
    pass


@dataclass(frozen=True)
class FeederLoad:
    feeder_id: str
    group: str
    demand: np.ndarray
    protected_service: str | None = None
    min_service_fraction: float = 0.0

    def __post_init__(self) -> None:
        demand = np.asarray(self.demand, dtype=float)
        if demand.shape != (STEPS,):
            raise ValueError(f"{self.feeder_id}: demand must have {STEPS} steps, got {demand.shape}")
        if (demand < 0).any():
            raise ValueError(f"{self.feeder_id}: demand must be nonnegative")
        if self.group not in (PROTECTED, GENERAL):
            raise ValueError(f"{self.feeder_id}: unknown group {self.group!r}")
        if not 0.0 <= self.min_service_fraction <= 1.0:
            raise ValueError(f"{self.feeder_id}: min_service_fraction must be in [0, 1]")
        object.__setattr__(self, "demand", demand)

    @property
    def reserved(self) -> bool:
        return self.protected_service in ("clinic", "elevator")

    @property
    def curtailable(self) -> np.ndarray:
        return self.demand * (1.0 - self.min_service_fraction)


@dataclass(frozen=True)
class PowerScenario:
    scenario_id: str
    feeders: tuple[FeederLoad, ...]
    capacity: np.ndarray
    weights: dict[str, float] = field(default_factory=lambda: {PROTECTED: 0.5, GENERAL: 1.0})
    start: datetime = datetime(2025, 1, 15)
    seed: int = 0
    # hazard proxy: per-hour rate when every reserved feeder sits at its minimum
    hazard_scale_per_hr: float = 1.0e-3
    hazard_margin: float = 0.05

    def __post_init__(self) -> None:
        cap = np.asarray(self.capacity, dtype=float)
        if cap.shape != (STEPS,):
            raise ValueError(f"capacity must have {STEPS} steps")
        object.__setattr__(self, "capacity", cap)
        object.__setattr__(self, "feeders", tuple(self.feeders))

    @property
    def demand(self) -> np.ndarray:
        return np.array([f.demand for f in self.feeders])

    @property
    def shortfall(self) -> np.ndarray:
        return np.maximum(self.demand.sum(axis=0) - self.capacity, 0.0)

    def time(self, t: int) -> datetime:
        return self.start + t * STEP


@dataclass
class CurtailmentPlan:
    """Curtailed MWh, shape (feeders, steps)."""

    curtailed: np.ndarray
    notes: list[str] = field(default_factory=list)

    def step_total(self, t: int) -> float:
        return float(self.curtailed[:, t].sum())


@dataclass(frozen=True)
class PowerReport:
    ens_total: float
    ens_protected: float
    ens_general: float
    disparity: float | None
    protected_min_violations: int

    def row(self) -> dict:
        return {
            "ENS_total": round(self.ens_total, 2),
            "ENS_A": round(self.ens_protected, 2),
            "ENS_B": round(self.ens_general, 2),
            "D": None if self.disparity is None else round(self.disparity, 2),
        }


def _zero_plan(loads: Sequence[FeederLoad]) -> CurtailmentPlan:
    return CurtailmentPlan(np.zeros((len(loads), STEPS)))


def _step_shortfall(loads: Sequence[FeederLoad], capacity: np.ndarray, t: int) -> float:
    return max(0.0, math.fsum(f.demand[t] for f in loads) - float(capacity[t]))


def merit_order_step(loads: Sequence[FeederLoad], weights: dict[str, float], shortfall: float, t: int) -> np.ndarray:
    """Curtail cheapest-weighted feeders first until ``shortfall`` is covered."""
    out = np.zeros(len(loads))
    if shortfall <= 0:
        return out
    order = sorted(range(len(loads)), key=lambda i: (weights[loads[i].group], i))
    remaining = shortfall
    for i in order:
        take = min(remaining, float(loads[i].curtailable[t]))
        out[i] = take
        remaining -= take
        if remaining <= EPS:
            break
    if remaining > 1e-9:
        raise InfeasibleDispatchError(
            f"step {t}: {remaining:.6f} MWh unservable even with all non-minimum load curtailed"
        )
    return out


def baseline_dispatch(
    loads: Sequence[FeederLoad], capacity: np.ndarray, weights: dict[str, float]
) -> CurtailmentPlan:
    if any(w <= 0 for w in weights.values()):
        raise ValueError("curtailment weights must be positive")
    plan = _zero_plan(loads)
    for t in range(STEPS):
        plan.curtailed[:, t] = merit_order_step(loads, weights, _step_shortfall(loads, capacity, t), t)
    return plan


def _rotate_within(loads: Sequence[FeederLoad], idx: list[int], quota: float, t: int) -> dict[int, float]:
    """Shed ``quota`` from feeders ``idx``: whole non-reserved feeders in
    round-robin order starting at ``t mod n``, then reserved feeders pro rata
    down to their minimum service."""
    out: dict[int, float] = {}
    if quota <= EPS:
        return out
    free = [i for i in idx if not loads[i].reserved]
    reserved = [i for i in idx if loads[i].reserved]
    remaining = quota
    if free:
        k = t % len(free)
        for i in free[k:] + free[:k]:
            take = min(remaining, float(loads[i].curtailable[t]))
            if take > 0:
                out[i] = take
                remaining -= take
            if remaining <= EPS:
                return out
    room = math.fsum(float(loads[i].curtailable[t]) for i in reserved)
    if remaining > EPS and room > 0:
        share = min(1.0, remaining / room)
        for i in reserved:
            out[i] = out.get(i, 0.0) + share * float(loads[i].curtailable[t])
    return out


@dataclass(frozen=True)
class Totals:
    """Running harm and baseline sums of both groups over some window."""

    harm_p: float = 0.0
    base_p: float = 0.0
    harm_g: float = 0.0
    base_g: float = 0.0


def _totals(loads: Sequence[FeederLoad], curtailed: np.ndarray, steps: range) -> Totals:
    hp = bp = hg = bg = 0.0
    for i, f in enumerate(loads):
        h = float(curtailed[i, steps.start : steps.stop].sum())
        b = float(f.demand[steps.start : steps.stop].sum())
        if f.group == PROTECTED:
            hp, bp = hp + h, bp + b
        else:
            hg, bg = hg + h, bg + b
    return Totals(hp, bp, hg, bg)


def _cumulative_bound(w: Totals, b_p: float, b_g: float, total: float, cap: float) -> float:
    """Largest protected share keeping the window ratio, this step included, under ``cap``."""
    p = w.base_p + b_p
    g = w.base_g + b_g
    if p <= 0 or g <= 0:
        return math.inf
    return (cap * (w.harm_g + total) / g - w.harm_p / p) / (1.0 / p + cap / g)


def equity_rotation_step(
    loads: Sequence[FeederLoad],
    total: float,
    disparity_cap: float,
    t: int,
    windows: Sequence[Totals] = (),
) -> tuple[np.ndarray, str | None]:
    """Split one step's curtailment ``total`` between the groups under the cap.

    The protected share is the proportional one (or tighter when the cap is
    below 1), lowered further if needed so that the cumulative ratio over
    each window in ``windows`` stays under the cap too. A per-step cap alone
    does not bound the cumulative ratio once the two groups' demand shares
    drift over the day.

    Returns the per-feeder allocation and a note when the cap had to be
    relaxed for lack of curtailable load in the general group.
    """
    out = np.zeros(len(loads))
    if total <= EPS:
        return out, None
    prot = [i for i, f in enumerate(loads) if f.group == PROTECTED]
    gen = [i for i, f in enumerate(loads) if f.group == GENERAL]
    b_p = math.fsum(float(loads[i].demand[t]) for i in prot)
    b_g = math.fsum(float(loads[i].demand[t]) for i in gen)
    room_p = math.fsum(float(loads[i].curtailable[t]) for i in prot)
    room_g = math.fsum(float(loads[i].curtailable[t]) for i in gen)
    if total > room_p + room_g + 1e-9:
        raise InfeasibleDispatchError(f"step {t}: curtailment {total:.6f} exceeds curtailable load")

    note = None
    if b_p <= 0:
        h_p = 0.0
    elif b_g <= 0:
        h_p = total
    else:
        rho = min(disparity_cap, 1.0)
        h_p = total * rho * b_p / (rho * b_p + b_g)
        for w in windows:
            h_p = min(h_p, _cumulative_bound(w, b_p, b_g, total, rho))
        h_p = max(0.0, min(h_p, room_p))
        if total - h_p > room_g:
            h_p = total - room_g
            note = (
                f"step {t}: equity cap {disparity_cap:g} infeasible, general group exhausted; "
                f"protected share raised to {h_p:.4f} MWh"
            )
    for i, v in _rotate_within(loads, prot, h_p, t).items():
        out[i] += v
    for i, v in _rotate_within(loads, gen, total - h_p, t).items():
        out[i] += v
    return out, note


def equity_rotation_fallback(
    loads: Sequence[FeederLoad], capacity: np.ndarray, disparity_cap: float
) -> CurtailmentPlan:
    plan = _zero_plan(loads)
    for t in range(STEPS):
        windows = [_totals(loads, plan.curtailed, range(0, t))]
        alloc, note = equity_rotation_step(
            loads, _step_shortfall(loads, capacity, t), disparity_cap, t, windows
        )
        plan.curtailed[:, t] = alloc
        if note:
            plan.notes.append(note)
    return plan


def deterministic_n1_step(loads: Sequence[FeederLoad], shortfall: float, t: int) -> np.ndarray:
    """Fixed contingency order: general feeders, then unreserved protected
    feeders, then reserved feeders down to their minimum."""

    def rank(i: int) -> tuple[int, int]:
        f = loads[i]
        return (2 if f.reserved else 0 if f.group == GENERAL else 1, i)

    order = sorted(range(len(loads)), key=rank)
    out = np.zeros(len(loads))
    remaining = shortfall
    for i in order:
        if remaining <= EPS:
            break
        take = min(remaining, float(loads[i].curtailable[t]))
        out[i] = take
        remaining -= take
    if remaining > 1e-9:
        raise InfeasibleDispatchError(f"step {t}: shortfall not coverable")
    return out


# --------------------------------------------------------------------------
# metrics


def _group_outcomes(
    loads: Sequence[FeederLoad], curtailed: np.ndarray, t: int
) -> tuple[GroupOutcome, GroupOutcome]:
    h = {PROTECTED: 0.0, GENERAL: 0.0}
    b = {PROTECTED: 0.0, GENERAL: 0.0}
    for i, f in enumerate(loads):
        h[f.group] += float(curtailed[i])
        b[f.group] += float(f.demand[t])
    return (
        GroupOutcome(PROTECTED, h[PROTECTED], b[PROTECTED], protected=True),
        GroupOutcome(GENERAL, h[GENERAL], b[GENERAL]),
    )


def step_disparity(loads: Sequence[FeederLoad], curtailed: np.ndarray, t: int) -> float:
    g, c = _group_outcomes(loads, curtailed, t)
    if g.harm == 0 and c.harm == 0:
        return 1.0
    if g.baseline <= 0 or c.baseline <= 0:
        return 1.0
    return window_disparity([(g, c)])


def plan_disparity(loads: Sequence[FeederLoad], plan: CurtailmentPlan, steps: Sequence[int] | None = None) -> float | None:
    """Disparity of ``plan`` summed over ``steps`` (the whole day by default).

    ``None`` when either group is absent, i.e. there is no complement.
    """
    groups = {f.group for f in loads}
    if groups != {PROTECTED, GENERAL}:
        return None
    steps = range(STEPS) if steps is None else steps
    series = [_group_outcomes(loads, plan.curtailed[:, t], t) for t in steps]
    if all(g.harm == 0 and c.harm == 0 for g, c in series):
        return 1.0
    return window_disparity(series)


def step_hazard(scenario: PowerScenario, curtailed: np.ndarray, t: int) -> float:
    reserved = [(i, f) for i, f in enumerate(scenario.feeders) if f.reserved]
    if not reserved:
        return 0.0
    near = 0
    for i, f in reserved:
        d = float(f.demand[t])
        if d <= 0:
            continue
        served = (d - float(curtailed[i])) / d
        if served <= f.min_service_fraction + scenario.hazard_margin:
            near += 1
    return hazard_rate(scenario.hazard_scale_per_hr * near / len(reserved))


def power_report(scenario: PowerScenario, plan: CurtailmentPlan) -> PowerReport:
    ens_p = math.fsum(
        float(plan.curtailed[i].sum()) for i, f in enumerate(scenario.feeders) if f.group == PROTECTED
    )
    ens_g = math.fsum(
        float(plan.curtailed[i].sum()) for i, f in enumerate(scenario.feeders) if f.group == GENERAL
    )
    violations = 0
    for i, f in enumerate(scenario.feeders):
        if f.reserved:
            served = f.demand - plan.curtailed[i]
            violations += int(np.sum(served < f.demand * f.min_service_fraction - 1e-9))
    return PowerReport(
        ens_total=ens_p + ens_g,
        ens_protected=ens_p,
        ens_general=ens_g,
        disparity=plan_disparity(scenario.feeders, plan),
        protected_min_violations=violations,
    )


def check_plan(scenario: PowerScenario, plan: CurtailmentPlan) -> list[str]:
    """Energy-conservation and capacity checks; empty when the plan is sound."""
    problems = []
    c = plan.curtailed
    d = scenario.demand
    if (c < -1e-12).any() or (c > d + 1e-9).any():
        problems.append("curtailment outside [0, demand]")
    served = (d - c).sum(axis=0)
    if (served > scenario.capacity + 1e-9).any():
        problems.append("served load exceeds capacity")
    return problems


# --------------------------------------------------------------------------
# gated run


@dataclass(frozen=True)
class PowerState:
    t: int
    scenario: PowerScenario
    applied: np.ndarray  # curtailment applied so far, shape (feeders, steps)


class MeritOrderPolicy:
    policy_id = "merit_order_dispatch"
    version = "1.0"

    def act(self, state: PowerState) -> np.ndarray:
        s = state.scenario
        return merit_order_step(s.feeders, s.weights, _step_shortfall(s.feeders, s.capacity, state.t), state.t)


class EquityRotation:
    """Equity-rotation fallback bound to one run.

    Keeps the cap on the current contiguous activation window and on the run
    so far.
    """

    def __init__(self, disparity_cap: float, gate: Gate | None = None):
        self.disparity_cap = disparity_cap
        self.gate = gate
        self._window_start: int | None = None
        self._last_t: int | None = None

    def __call__(self, state: PowerState) -> np.ndarray:
        s, t = state.scenario, state.t
        if self._last_t is None or t != self._last_t + 1:
            self._window_start = t
        self._last_t = t
        windows = [
            _totals(s.feeders, state.applied, range(self._window_start, t)),
            _totals(s.feeders, state.applied, range(0, t)),
        ]
        alloc, note = equity_rotation_step(
            s.feeders, _step_shortfall(s.feeders, s.capacity, t), self.disparity_cap, t, windows
        )
        if note and self.gate is not None:
            self.gate.note(note)
        return alloc


def deterministic_n1(state: PowerState) -> np.ndarray:
    s = state.scenario
    return deterministic_n1_step(s.feeders, _step_shortfall(s.feeders, s.capacity, state.t), state.t)


FALLBACK_DESCRIPTIONS = {
    "n-1_deterministic": "deterministic contingency-list curtailment with clinic and elevator feeders exempt",
    "equity_rotations": "rotating curtailment with an equity cap and reserved clinic and elevator feeders",
}


def _monitors(scenario: PowerScenario, t: int, curtailed: np.ndarray) -> MonitorVector:
    return MonitorVector(
        t=t,
        disparity=step_disparity(scenario.feeders, curtailed, t),
        hazard=step_hazard(scenario, curtailed, t),
    )


def run_gated_power(
    scenario: PowerScenario, config: GovernanceConfig, mode: Mode = "actuated"
) -> tuple[CurtailmentPlan, SimulationReport]:
    policy = MeritOrderPolicy()
    rotation = EquityRotation(config.thresholds.disparity)
    gate = Gate(
        config=config,
        domain="power",
        policy=policy,
        fallbacks={"equity_rotations": rotation, "n-1_deterministic": deterministic_n1},
        scenario_id=scenario.scenario_id,
        mode=mode,
        fallback_descriptions=FALLBACK_DESCRIPTIONS,
    )
    rotation.gate = gate
    plan = _zero_plan(scenario.feeders)
    for t in range(STEPS):
        state = PowerState(t, scenario, plan.curtailed)
        candidate = policy.act(state)
        monitors = [_monitors(scenario, t, candidate)]
        if t > 0:
            monitors.insert(0, _monitors(scenario, t - 1, plan.curtailed[:, t - 1]))
        decision = gate.step(state, monitors, scenario.time(t))
        plan.curtailed[:, t] = decision.applied_action
    gate.finish(scenario.time(STEPS))
    report = SimulationReport.from_gate(gate, power_report(scenario, plan).row())
    return plan, report


def fallback_windows(report: SimulationReport) -> list[tuple[int, int]]:
    """Maximal runs of fallback-actuated steps, as [start, end) step indices."""
    windows = []
    start = None
    for s in report.trace:
        if s["action_source"] == "fallback" and s["fallback_name"] == "equity_rotations":
            if start is None:
                start = s["t"]
        elif start is not None:
            windows.append((start, s["t"]))
            start = None
    if start is not None:
        windows.append((start, len(report.trace)))
    return windows


@dataclass
class PowerCaseResult:
    scenario: PowerScenario
    baseline: PowerReport
    gated: PowerReport
    baseline_plan: CurtailmentPlan
    gated_plan: CurtailmentPlan
    run: SimulationReport

    def table(self) -> list[dict]:
        return [{"variant": "Baseline", **self.baseline.row()}, {"variant": "R2O", **self.gated.row()}]

    def window_disparities(self) -> list[float]:
        out = []
        for a, b in fallback_windows(self.run):
            d = plan_disparity(self.scenario.feeders, self.gated_plan, range(a, b))
            if d is not None:
                out.append(d)
        return out


def run_power_case(scenario: PowerScenario, config: GovernanceConfig, mode: Mode = "actuated") -> PowerCaseResult:
    baseline_plan = baseline_dispatch(scenario.feeders, scenario.capacity, scenario.weights)
    gated_plan, run = run_gated_power(scenario, config, mode)
    baseline = power_report(scenario, baseline_plan)
    gated = power_report(scenario, gated_plan)
    for name, plan in (("baseline", baseline_plan), ("gated", gated_plan)):
        problems = check_plan(scenario, plan)
        if problems:
            raise InvariantError(f"{name} plan: {'; '.join(problems)}")
    if abs(baseline.ens_total - gated.ens_total) > 1e-9:
        raise InvariantError(
            f"total curtailment differs between variants: {baseline.ens_total!r} vs {gated.ens_total!r}"
        )
    result = PowerCaseResult(scenario, baseline, gated, baseline_plan, gated_plan, run)
    if mode == "actuated":
        for d in result.window_disparities():
            if d > config.thresholds.disparity + 1e-9:
                raise InvariantError(f"fallback window disparity {d!r} exceeds cap")
    return result


# --------------------------------------------------------------------------
# fixtures and scenario files


def _hours() -> np.ndarray:
    return np.arange(STEPS) * 0.25


def case1_fixture(seed: int = 0, shortfall_scale: float = 1.0) -> PowerScenario:
    """Calibrated one-day shortfall: four protected feeders (a clinic and an
    elevator bank among them), eight larger general feeders, and an evening
    capacity dip centred on 18:30.

    Tuned so the merit-order baseline sheds about 76.5 MWh with a day
    disparity near 5.6. ``shortfall_scale`` shrinks or deepens the dip.
    """
    rng = np.random.default_rng(seed)
    h = _hours()
    shape = 0.6 + 0.25 * np.exp(-(((h - 8.5) / 2.0) ** 2)) + 0.45 * np.exp(-(((h - 18.5) / 2.5) ** 2))
    layout = [
        ("P1", PROTECTED, "clinic", 0.8, 6.3),
        ("P2", PROTECTED, "elevator", 0.8, 6.3),
        ("P3", PROTECTED, None, 0.0, 6.3),
        ("P4", PROTECTED, None, 0.0, 6.3),
        *[(f"G{i}", GENERAL, None, 0.0, 9.45) for i in range(1, 9)],
    ]
    feeders = []
    for fid, group, service, msf, peak_mw in layout:
        mw = peak_mw * shape * (1.0 + 0.03 * rng.standard_normal(STEPS))
        feeders.append(FeederLoad(fid, group, np.round(mw * 0.25, 6), service, msf))
    total = sum(f.demand for f in feeders)
    top = float(total.max())
    dip = 0.3 * shortfall_scale * np.exp(-(((h - 18.5) / 3.0) ** 2))
    capacity = np.round(np.minimum(top, top * (1.0 - dip)), 6)
    return PowerScenario("case1-load-shedding", tuple(feeders), capacity, seed=seed)


def scenario_to_dict(s: PowerScenario) -> dict:
    return {
        "case": "power",
        "scenario_id": s.scenario_id,
        "start": s.start.isoformat(),
        "seed": s.seed,
        "weights": dict(s.weights),
        "hazard_scale_per_hr": s.hazard_scale_per_hr,
        "hazard_margin": s.hazard_margin,
        "capacity": [float(x) for x in s.capacity],
        "feeders": [
            {
                "feeder_id": f.feeder_id,
                "group": f.group,
                "protected_service": f.protected_service,
                "min_service_fraction": f.min_service_fraction,
                "demand": [float(x) for x in f.demand],
            }
            for f in s.feeders
        ],
    }


def scenario_from_dict(data: dict) -> PowerScenario:
    return PowerScenario(
        scenario_id=data["scenario_id"],
        feeders=tuple(
            FeederLoad(
                f["feeder_id"],
                f["group"],
                np.asarray(f["demand"], dtype=float),
                f.get("protected_service"),
                float(f.get("min_service_fraction", 0.0)),
            )
            for f in data["feeders"]
        ),
        capacity=np.asarray(data["capacity"], dtype=float),
        weights={k: float(v) for k, v in data.get("weights", {PROTECTED: 0.5, GENERAL: 1.0}).items()},
        start=datetime.fromisoformat(data.get("start", "2025-01-15T00:00:00")),
        seed=int(data.get("seed", 0)),
        hazard_scale_per_hr=float(data.get("hazard_scale_per_hr", 1.0e-3)),
        hazard_margin=float(data.get("hazard_margin", 0.05)),
    )
