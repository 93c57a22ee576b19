"""Single-zone community centre: 1R1C thermal model with CO2 balance.

The baseline scheduler heats to a comfort setpoint during programmed hours
and drops to a night setback from 20:00, even if seniors are still in the
building. Under the override, staff assert protected occupancy; while the
assertion covers an occupied step the heating floor is raised to the
comfort minimum and ventilation keeps CO2 under its cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime, time, timedelta
from typing import Sequence

import numpy as np

from ..config import GovernanceConfig
from ..gating import Gate, InvariantError, Mode, SimulationReport
from ..monitors import MonitorVector, accessibility_downtime

STEPS = 96
STEP = timedelta(minutes=15)
DT_H = 0.25
PROTECTED_GROUP = "seniors"
TEMP_TOL = 1e-6


class BuildingModelError(ValueError):
    pass


@dataclass(frozen=True)
class BuildingParams:
    thermal_resistance: float = 0.22  # K/kW
    thermal_capacitance: float = 90.0  # kWh/K
    internal_gain_per_occupant: float = 0.1  # kW
    hvac_heat_capacity: float = 300.0  # kW thermal
    hvac_cop: float = 2.1
    base_load: float = 229.0  # kW electric
    base_gain: float = 0.0  # kW thermal
    volume_m3: float = 3000.0
    co2_per_occupant_m3h: float = 0.018
    outdoor_co2_ppm: float = 420.0
    design_ventilation_m3h: float = 3600.0
    max_ventilation_m3h: float = 6000.0

    def __post_init__(self) -> None:
        for name in (
            "thermal_resistance",
            "thermal_capacitance",
            "internal_gain_per_occupant",
            "hvac_heat_capacity",
            "hvac_cop",
            "base_load",
            "volume_m3",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class ComfortBounds:
    t_min_occupied: float = 20.0
    t_max_occupied: float = 24.0
    co2_max: float = 1000.0
    co2_target: float = 950.0

    def __post_init__(self) -> None:
        if not self.t_min_occupied < self.t_max_occupied:
            raise ValueError("t_min_occupied must be below t_max_occupied")


@dataclass(frozen=True)
class Schedule:
    comfort_setpoint: float = 21.0
    setback_setpoint: float = 15.0
    occupied_start: time = time(7, 0)
    setback_start: time = time(20, 0)


@dataclass(frozen=True)
class OccupancySchedule:
    occupants: np.ndarray
    protected_present: np.ndarray

    def __post_init__(self) -> None:
        occ = np.asarray(self.occupants, dtype=float)
        prot = np.asarray(self.protected_present, dtype=bool)
        if occ.shape != (STEPS,) or prot.shape != (STEPS,):
            raise ValueError(f"occupancy series must have {STEPS} steps")
        if (occ < 0).any():
            raise ValueError("occupant counts must be nonnegative")
        if (prot & (occ <= 0)).any():
            raise ValueError("protected occupants flagged on a step with no occupants")
        object.__setattr__(self, "occupants", occ)
        object.__setattr__(self, "protected_present", prot)


@dataclass(frozen=True)
class BuildingState:
    temp: float
    co2: float


@dataclass(frozen=True)
class BuildingScenario:
    scenario_id: str
    params: BuildingParams
    outdoor_hourly: np.ndarray
    occupancy: OccupancySchedule
    assertions: tuple[tuple[float, float], ...] = ()  # (start_hour, end_hour)
    initial: BuildingState = BuildingState(15.0, 420.0)
    schedule: Schedule = Schedule()
    bounds: ComfortBounds = ComfortBounds()
    start: datetime = datetime(2025, 1, 15)
    lookahead_steps: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        temps = np.asarray(self.outdoor_hourly, dtype=float)
        if temps.shape != (24,):
            raise ValueError("outdoor_hourly needs 24 hourly values")
        object.__setattr__(self, "outdoor_hourly", temps)
        for a, b in self.assertions:
            if not 0 <= a <= b <= 24:
                raise ValueError(f"assertion {a}-{b} outside the simulated day")

    def outdoor(self, t: int) -> float:
        return float(self.outdoor_hourly[t // 4])

    def time(self, t: int) -> datetime:
        return self.start + t * STEP


@dataclass(frozen=True)
class BuildingReport:
    discomfort_hours_protected: int
    energy_kwh: float
    energy_delta_kwh: float = 0.0
    max_co2_protected: float = 0.0
    min_temp_protected: float | None = None


# --------------------------------------------------------------------------
# model


def step_thermal(
    state: BuildingState,
    params: BuildingParams,
    outdoor_temp: float,
    hvac_output_kw: float,
    occupants: float,
    dt: float,
    ventilation_m3h: float = 0.0,
) -> BuildingState:
    """Explicit first-order update of indoor temperature and CO2 over ``dt`` hours."""
    values = (state.temp, state.co2, outdoor_temp, hvac_output_kw, occupants, dt, ventilation_m3h)
    if not all(math.isfinite(v) for v in values):
        raise BuildingModelError(f"non-finite input to thermal step: {values}")
    if dt <= 0:
        raise BuildingModelError("dt must be positive")
    p = params
    gains = p.internal_gain_per_occupant * occupants + p.base_gain
    envelope = (state.temp - outdoor_temp) / p.thermal_resistance
    temp = state.temp + dt / p.thermal_capacitance * (hvac_output_kw + gains - envelope)
    generation = p.co2_per_occupant_m3h * occupants * 1e6 / p.volume_m3
    removal = ventilation_m3h * (state.co2 - p.outdoor_co2_ppm) / p.volume_m3
    co2 = state.co2 + dt * (generation - removal)
    return BuildingState(temp, co2)


def heating_for_setpoint(
    state: BuildingState, params: BuildingParams, outdoor_temp: float, occupants: float, setpoint: float, dt: float
) -> float:
    """Heat (kW) that lands the end-of-step temperature on ``setpoint``, within capacity."""
    p = params
    gains = p.internal_gain_per_occupant * occupants + p.base_gain
    need = p.thermal_capacitance * (setpoint - state.temp) / dt + (state.temp - outdoor_temp) / p.thermal_resistance - gains
    return min(max(need, 0.0), p.hvac_heat_capacity)


def ventilation_for_cap(
    state: BuildingState, params: BuildingParams, occupants: float, target: float, dt: float
) -> float:
    """Airflow (m3/h) that keeps end-of-step CO2 at or below ``target``."""
    p = params
    generation = p.co2_per_occupant_m3h * occupants * 1e6 / p.volume_m3
    excess = state.co2 + dt * generation - target
    if excess <= 0:
        return 0.0
    spread = state.co2 - p.outdoor_co2_ppm
    if spread <= 0:
        return p.max_ventilation_m3h
    return min(excess * p.volume_m3 / (dt * spread), p.max_ventilation_m3h)


def baseline_scheduler(time_of_day: time, schedule: Schedule = Schedule()) -> float:
    if schedule.occupied_start <= time_of_day < schedule.setback_start:
        return schedule.comfort_setpoint
    return schedule.setback_setpoint


def _scheduled_ventilation(time_of_day: time, scenario: BuildingScenario) -> float:
    s = scenario.schedule
    if s.occupied_start <= time_of_day < s.setback_start:
        return scenario.params.design_ventilation_m3h
    return 0.0


@dataclass(frozen=True)
class OverrideBounds:
    """Per-step floor temperature (NaN where none) and CO2 cap (NaN where none)."""

    floor: np.ndarray
    co2_cap: np.ndarray

    @property
    def active(self) -> np.ndarray:
        return ~np.isnan(self.floor)


def asserted_mask(occupancy: OccupancySchedule, assertions: Sequence[tuple[float, float]]) -> np.ndarray:
    """Steps covered by a staff assertion and actually occupied."""
    mask = np.zeros(STEPS, dtype=bool)
    for a, b in assertions:
        lo = int(math.floor(a * 4 + 1e-9))
        hi = int(math.ceil(b * 4 - 1e-9))
        mask[lo:hi] = True
    return mask & (occupancy.occupants > 0)


def r2o_occupancy_override(
    occupancy: OccupancySchedule,
    assertions: Sequence[tuple[float, float]],
    bounds: ComfortBounds = ComfortBounds(),
) -> OverrideBounds:
    mask = asserted_mask(occupancy, assertions)
    floor = np.where(mask, bounds.t_min_occupied, np.nan)
    cap = np.where(mask, bounds.co2_target, np.nan)
    return OverrideBounds(floor, cap)


# --------------------------------------------------------------------------
# control


@dataclass(frozen=True)
class Action:
    setpoint: float
    hvac_kw: float
    ventilation_m3h: float


@dataclass(frozen=True)
class StepInput:
    t: int
    scenario: BuildingScenario
    state: BuildingState


class SetbackScheduler:
    policy_id = "setback_scheduler"
    version = "1.0"

    def act(self, s: StepInput) -> Action:
        sc = s.scenario
        tod = sc.time(s.t).time()
        sp = baseline_scheduler(tod, sc.schedule)
        q = heating_for_setpoint(s.state, sc.params, sc.outdoor(s.t), sc.occupancy.occupants[s.t], sp, DT_H)
        return Action(sp, q, _scheduled_ventilation(tod, sc))


class ProtectedOccupancyFallback:
    """Scheduler with the setback lifted on asserted protected-occupancy steps.

    With ``all_occupied`` set it applies the comfort bounds on every occupied
    step instead (the plain comfort-bounds fallback).
    """

    def __init__(self, overrides: OverrideBounds, bounds: ComfortBounds, all_occupied: bool = False):
        self.overrides = overrides
        self.bounds = bounds
        self.all_occupied = all_occupied

    def act(self, s: StepInput) -> Action:
        sc = s.scenario
        tod = sc.time(s.t).time()
        occupants = sc.occupancy.occupants[s.t]
        sp = baseline_scheduler(tod, sc.schedule)
        vent = _scheduled_ventilation(tod, sc)
        binding = self.overrides.active[s.t] or (self.all_occupied and occupants > 0)
        if binding:
            sp = min(max(sp, self.bounds.t_min_occupied), self.bounds.t_max_occupied)
            vent = max(vent, ventilation_for_cap(s.state, sc.params, occupants, self.bounds.co2_target, DT_H))
        q = heating_for_setpoint(s.state, sc.params, sc.outdoor(s.t), occupants, sp, DT_H)
        return Action(sp, q, vent)

    __call__ = act


FALLBACK_DESCRIPTIONS = {
    "comfort_bounds": "hold 20-24 C and CO2 below 1000 ppm whenever the building is occupied",
    "no_night_setback_protected": "no night setback while protected occupants are asserted present",
}


def _advance(sc: BuildingScenario, t: int, state: BuildingState, action: Action) -> BuildingState:
    return step_thermal(
        state, sc.params, sc.outdoor(t), action.hvac_kw, float(sc.occupancy.occupants[t]), DT_H, action.ventilation_m3h
    )


def _out_of_bounds(state: BuildingState, bounds: ComfortBounds) -> bool:
    return state.temp < bounds.t_min_occupied - TEMP_TOL or state.temp > bounds.t_max_occupied + TEMP_TOL


@dataclass
class BuildingTrace:
    temps: list[float] = field(default_factory=list)  # end-of-step
    co2: list[float] = field(default_factory=list)
    actions: list[Action] = field(default_factory=list)
    trigger_step: int | None = None


def _intervals(sc: BuildingScenario, steps: Sequence[int]) -> list[tuple[datetime, datetime]]:
    return [(sc.time(t), sc.time(t + 1)) for t in steps]


def _forecast_minutes(
    sc: BuildingScenario, t: int, state: BuildingState, policy: SetbackScheduler, watched: np.ndarray
) -> float:
    """Discomfort minutes over the lookahead if the candidate schedule runs on."""
    minutes = 0.0
    for k in range(t, min(t + sc.lookahead_steps, STEPS)):
        action = policy.act(StepInput(k, sc, state))
        state = _advance(sc, k, state, action)
        if watched[k] and _out_of_bounds(state, sc.bounds):
            minutes += STEP.total_seconds() / 60.0
    return minutes


def simulate_building(
    sc: BuildingScenario,
    config: GovernanceConfig | None = None,
    mode: Mode = "actuated",
    gated: bool = True,
) -> tuple[BuildingTrace, SimulationReport | None]:
    """Run the day; with ``gated`` the scheduler runs behind the override gate."""
    policy = SetbackScheduler()
    trace = BuildingTrace()
    state = sc.initial
    gate = None
    watched = asserted_mask(sc.occupancy, sc.assertions)
    if gated:
        overrides = r2o_occupancy_override(sc.occupancy, sc.assertions, sc.bounds)
        gate = Gate(
            config=config,
            domain="buildings",
            policy=policy,
            fallbacks={
                "no_night_setback_protected": ProtectedOccupancyFallback(overrides, sc.bounds),
                "comfort_bounds": ProtectedOccupancyFallback(overrides, sc.bounds, all_occupied=True),
            },
            scenario_id=sc.scenario_id,
            mode=mode,
            fallback_descriptions=FALLBACK_DESCRIPTIONS,
        )
    observed_steps: list[int] = []
    for t in range(STEPS):
        inp = StepInput(t, sc, state)
        if gate is None:
            action = policy.act(inp)
        else:
            now = sc.time(t)
            observed = accessibility_downtime(_intervals(sc, observed_steps), now)
            predicted = observed + _forecast_minutes(sc, t, state, policy, watched)
            monitors = [
                MonitorVector(t=t, downtime={PROTECTED_GROUP: observed}),
                MonitorVector(t=t, downtime={PROTECTED_GROUP: min(predicted, 1440.0)}),
            ]
            decision = gate.step(inp, monitors, now)
            if decision.onset and trace.trigger_step is None:
                trace.trigger_step = t
            action = decision.applied_action
        state = _advance(sc, t, state, action)
        if watched[t] and _out_of_bounds(state, sc.bounds):
            observed_steps.append(t)
        trace.temps.append(state.temp)
        trace.co2.append(state.co2)
        trace.actions.append(action)
    report = None
    if gate is not None:
        gate.finish(sc.time(STEPS))
        report = SimulationReport.from_gate(gate, {})
    return trace, report


def energy_kwh(sc: BuildingScenario, trace: BuildingTrace) -> float:
    p = sc.params
    return math.fsum(a.hvac_kw * DT_H / p.hvac_cop + p.base_load * DT_H for a in trace.actions)


def discomfort_hours(sc: BuildingScenario, trace: BuildingTrace) -> int:
    """Whole hours with protected occupants present and any step outside the bounds."""
    hours = set()
    for t in range(STEPS):
        if sc.occupancy.protected_present[t] and _out_of_bounds(BuildingState(trace.temps[t], 0.0), sc.bounds):
            hours.add(t // 4)
    return len(hours)


def building_report(sc: BuildingScenario, trace: BuildingTrace, baseline_energy: float | None = None) -> BuildingReport:
    prot = sc.occupancy.protected_present
    e = energy_kwh(sc, trace)
    temps = [trace.temps[t] for t in range(STEPS) if prot[t]]
    return BuildingReport(
        discomfort_hours_protected=discomfort_hours(sc, trace),
        energy_kwh=e,
        energy_delta_kwh=0.0 if baseline_energy is None else e - baseline_energy,
        max_co2_protected=max((trace.co2[t] for t in range(STEPS) if prot[t]), default=0.0),
        min_temp_protected=min(temps) if temps else None,
    )


@dataclass
class BuildingCaseResult:
    scenario: BuildingScenario
    baseline: BuildingReport
    gated: BuildingReport
    baseline_trace: BuildingTrace
    gated_trace: BuildingTrace
    run: SimulationReport

    def table(self) -> list[dict]:
        return [
            {
                "metric": "Senior discomfort-hours (occupied)",
                "baseline": self.baseline.discomfort_hours_protected,
                "r2o": self.gated.discomfort_hours_protected,
            },
            {
                "metric": "Whole-building energy (kWh)",
                "baseline": round(self.baseline.energy_kwh, 1),
                "r2o": round(self.gated.energy_kwh, 1),
            },
            {"metric": "Energy delta (kWh)", "baseline": None, "r2o": round(self.gated.energy_delta_kwh, 1)},
        ]

    @property
    def trigger_time(self) -> datetime | None:
        t = self.gated_trace.trigger_step
        return None if t is None else self.scenario.time(t)


def check_override_bounds(sc: BuildingScenario, trace: BuildingTrace, run: SimulationReport) -> list[str]:
    """Comfort floor and CO2 cap on asserted steps run under the fallback.

    Steps where the fallback asked for more heat or air than the plant can
    deliver are exempt; the guarantee only holds with sufficient capacity.
    """
    problems = []
    watched = asserted_mask(sc.occupancy, sc.assertions)
    p = sc.params
    for t, step in enumerate(run.trace):
        if step["action_source"] != "fallback" or not watched[t]:
            continue
        action = trace.actions[t]
        if action.hvac_kw < p.hvac_heat_capacity and trace.temps[t] < sc.bounds.t_min_occupied - 0.1:
            problems.append(f"step {t}: {trace.temps[t]:.3f} C below the comfort floor under the override")
        if action.ventilation_m3h < p.max_ventilation_m3h and trace.co2[t] >= sc.bounds.co2_max:
            problems.append(f"step {t}: CO2 {trace.co2[t]:.0f} ppm at or above the cap under the override")
    return problems


def run_building_case(sc: BuildingScenario, config: GovernanceConfig, mode: Mode = "actuated") -> BuildingCaseResult:
    base_trace, _ = simulate_building(sc, gated=False)
    gated_trace, run = simulate_building(sc, config, mode)
    problems = check_override_bounds(sc, gated_trace, run)
    if problems:
        raise InvariantError("; ".join(problems))
    baseline = building_report(sc, base_trace)
    gated = building_report(sc, gated_trace, baseline.energy_kwh)
    run.metrics = {
        "discomfort_hours_baseline": baseline.discomfort_hours_protected,
        "discomfort_hours_r2o": gated.discomfort_hours_protected,
        "energy_baseline_kwh": round(baseline.energy_kwh, 3),
        "energy_r2o_kwh": round(gated.energy_kwh, 3),
        "energy_delta_kwh": round(gated.energy_delta_kwh, 3),
    }
    return BuildingCaseResult(sc, baseline, gated, base_trace, gated_trace, run)


# --------------------------------------------------------------------------
# fixtures and scenario files


def _occupancy(general: int = 60, seniors: int = 40, seniors_from: float = 18.0, seniors_until: float = 22.0) -> OccupancySchedule:
    h = np.arange(STEPS) * DT_H
    occupants = np.where((h >= 8) & (h < 20), general, 0).astype(float)
    senior_mask = (h >= seniors_from) & (h < seniors_until)
    occupants = occupants + np.where(senior_mask, seniors, 0)
    return OccupancySchedule(occupants, senior_mask)


def cold_day_fixture(seed: int = 0) -> BuildingScenario:
    """A cold winter day with seniors' evening programme running to 22:00.

    Evening outdoor temperature sits near -12 C, so the 20:00 setback pulls
    the hall below 20 C within the first hour.
    """
    hours = np.arange(24)
    outdoor = -9.0 - 4.0 * np.cos((hours - 14) / 24 * 2 * np.pi)
    return BuildingScenario(
        scenario_id="case2-cold-day",
        params=BuildingParams(),
        outdoor_hourly=np.round(outdoor, 3),
        occupancy=_occupancy(),
        assertions=((20.0, 22.0),),
        seed=seed,
    )


def mild_day_fixture(seed: int = 0) -> BuildingScenario:
    hours = np.arange(24)
    outdoor = 18.5 + 1.5 * np.cos((hours - 15) / 24 * 2 * np.pi)
    return replace(
        cold_day_fixture(seed),
        scenario_id="case2-mild-day",
        outdoor_hourly=np.round(outdoor, 3),
        initial=BuildingState(19.0, 420.0),
    )


def scenario_to_dict(sc: BuildingScenario) -> dict:
    p = sc.params
    return {
        "case": "building",
        "scenario_id": sc.scenario_id,
        "start": sc.start.isoformat(),
        "seed": sc.seed,
        "params": {k: getattr(p, k) for k in p.__dataclass_fields__},
        "outdoor_hourly": [float(x) for x in sc.outdoor_hourly],
        "occupancy": {
            "occupants": [float(x) for x in sc.occupancy.occupants],
            "protected_present": [bool(x) for x in sc.occupancy.protected_present],
        },
        "assertions": [list(a) for a in sc.assertions],
        "initial": {"temp": sc.initial.temp, "co2": sc.initial.co2},
        "lookahead_steps": sc.lookahead_steps,
    }


def scenario_from_dict(data: dict) -> BuildingScenario:
    occ = data["occupancy"]
    init = data.get("initial", {"temp": 15.0, "co2": 420.0})
    return BuildingScenario(
        scenario_id=data["scenario_id"],
        params=BuildingParams(**data.get("params", {})),
        outdoor_hourly=np.asarray(data["outdoor_hourly"], dtype=float),
        occupancy=OccupancySchedule(np.asarray(occ["occupants"]), np.asarray(occ["protected_present"])),
        assertions=tuple((float(a), float(b)) for a, b in data.get("assertions", [])),
        initial=BuildingState(float(init["temp"]), float(init["co2"])),
        start=datetime.fromisoformat(data.get("start", "2025-01-15T00:00:00")),
        lookahead_steps=int(data.get("lookahead_steps", 4)),
        seed=int(data.get("seed", 0)),
    )
