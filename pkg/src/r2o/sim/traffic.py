"""Point-queue simulation of a 4x4 signalized grid.

Vehicles travel straight through the grid on rows (east/west) and columns
(north/south) and queue at stop lines. Each intersection runs one of two
controllers: a max-pressure adaptive controller that serves its exclusive
pedestrian phase only when pedestrian pressure wins, or a fixed-time plan
with a walk phase every cycle and optional transit signal priority on the
bus corridor. The gate supervises at one-minute intervals; within an
interval the chosen controller runs at 1 s resolution.
"""

from __future__ import annotations

import math
import statistics
from collections import deque
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from typing import Sequence

import numpy as np

from ..config import GovernanceConfig
from ..gating import Gate, InvariantError, Mode, SimulationReport
from ..monitors import MonitorVector

SIZE = 4
EB, WB, SB, NB = range(4)
DIRECTIONS = ("EB", "WB", "SB", "NB")
NS_PHASE = (SB, NB)
EW_PHASE = (EB, WB)
NS_GREEN, EW_GREEN, PED_WALK, ALL_RED = "NS_green", "EW_green", "ped_walk", "all_red"
PED_SERVICE = "pedestrian_wait_sensitive"
BUS_SERVICE = "bus_headway"


class TrafficScenarioError(ValueError):
    pass


def node(row: int, col: int) -> int:
    return row * SIZE + col


def downstream(i: int, d: int) -> int | None:
    """Next intersection for a vehicle leaving ``i`` in direction ``d``."""
    r, c = divmod(i, SIZE)
    r, c = {EB: (r, c + 1), WB: (r, c - 1), SB: (r + 1, c), NB: (r - 1, c)}[d]
    return node(r, c) if 0 <= r < SIZE and 0 <= c < SIZE else None


def entry_node(d: int, k: int) -> int:
    """Entry intersection for the ``k``-th row or column in direction ``d``."""
    return {EB: node(k, 0), WB: node(k, SIZE - 1), SB: node(0, k), NB: node(SIZE - 1, k)}[d]


# --------------------------------------------------------------------------
# scenario types


@dataclass(frozen=True)
class GridNetwork:
    link_travel_time: int = 20  # s, free flow between stop lines
    saturation_flow: float = 0.5  # veh/s per approach
    corridor_row: int = 1
    sensitive_sites: tuple[int, ...] = (node(1, 1), node(1, 2), node(2, 1), node(2, 2))
    crosswalks_per_intersection: int = 4
    turn_off_fraction: float = 0.6  # share of through traffic leaving to side streets

    def __post_init__(self) -> None:
        if not 0 <= self.corridor_row < SIZE:
            raise TrafficScenarioError("corridor row outside the grid")
        if any(not 0 <= s < SIZE * SIZE for s in self.sensitive_sites):
            raise TrafficScenarioError("sensitive site outside the grid")
        if self.crosswalks_per_intersection < 1:
            raise TrafficScenarioError("every intersection needs a crosswalk")
        if not 0 <= self.turn_off_fraction < 1:
            raise TrafficScenarioError("turn_off_fraction must lie in [0, 1)")
        if self.link_travel_time < 1 or self.saturation_flow <= 0:
            raise TrafficScenarioError("travel time and saturation flow must be positive")

    @property
    def corridor(self) -> tuple[int, ...]:
        return tuple(node(self.corridor_row, c) for c in range(SIZE))


@dataclass(frozen=True)
class TrafficDemand:
    """Arrival rates per 15-minute period.

    ``vehicle_rates`` maps an entry link name (``"EB0"`` is eastbound into
    row 0) to veh/s; ``ped_rates`` is pedestrians/s per crosswalk, one series
    for every intersection unless ``ped_rates_by_site`` overrides it.
    """

    vehicle_rates: dict[str, tuple[float, ...]]
    ped_rates: tuple[float, ...]
    headway_target_min: float = 5.0
    ped_rates_by_site: dict[int, tuple[float, ...]] = field(default_factory=dict)
    period_s: int = 900

    def __post_init__(self) -> None:
        if not self.headway_target_min > 0:
            raise TrafficScenarioError("headway target must be positive")
        series = [*self.vehicle_rates.values(), self.ped_rates, *self.ped_rates_by_site.values()]
        if any(r < 0 or not math.isfinite(r) for s in series for r in s):
            raise TrafficScenarioError("arrival rates must be nonnegative")
        for name in self.vehicle_rates:
            if name[:2] not in DIRECTIONS or not name[2:].isdigit() or not 0 <= int(name[2:]) < SIZE:
                raise TrafficScenarioError(f"unknown entry link {name!r}")

    def rate(self, series: Sequence[float], t: int) -> float:
        if not series:
            return 0.0
        return series[min(t // self.period_s, len(series) - 1)]


@dataclass(frozen=True)
class SignalTiming:
    clearance: int = 2  # all-red between phases
    ped_phase: int = 12  # walk plus pedestrian clearance
    walk: int = 6
    min_green: int = 30
    max_green: int = 60
    ped_weight: float = 0.3
    ped_max_wait: int = 150
    fixed_ns: int = 19
    fixed_ew: int = 19
    ped_red_limit: int = 60
    tsp_cap: int = 10
    tsp_detect: int = 10
    tsp_min_green: int = 7

    def __post_init__(self) -> None:
        if not 0 < self.walk <= self.ped_phase:
            raise TrafficScenarioError("walk interval must fit inside the pedestrian phase")
        if not 0 < self.min_green <= self.max_green:
            raise TrafficScenarioError("need 0 < min_green <= max_green")
        if self.fixed_red_bound() > self.ped_red_limit:
            raise TrafficScenarioError(
                f"fixed-time plan allows {self.fixed_red_bound()} s of pedestrian red, limit {self.ped_red_limit} s"
            )

    @property
    def cycle(self) -> int:
        return self.fixed_ns + self.fixed_ew + self.ped_phase + 3 * self.clearance

    def fixed_red_bound(self) -> int:
        """Longest pedestrian red the fixed plan can produce, TSP extension included."""
        return self.cycle - self.walk + self.tsp_cap


@dataclass(frozen=True)
class TrafficScenario:
    scenario_id: str
    network: GridNetwork
    demand: TrafficDemand
    timing: SignalTiming = SignalTiming()
    horizon_s: int = 7200
    decision_interval_s: int = 60
    quality_window_s: int = 900
    min_ped_samples: int = 10
    headway_tolerance_min: float = 2.5
    headway_window_s: int = 1800
    # stop dwell = base + boarding time for passengers accrued since the
    # previous bus left that stop + uniform noise; a late bus dwells longer,
    # which is what lets headway irregularity grow along the corridor
    dwell_base_s: float = 8.0
    boarding_s_per_min: float = 4.0
    dwell_noise_s: float = 3.0
    bus_dispatch_jitter_s: float = 10.0
    start: datetime = datetime(2025, 1, 15, 7, 0)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.horizon_s <= 0 or self.decision_interval_s <= 0:
            raise TrafficScenarioError("horizon and decision interval must be positive")
        if min(self.dwell_base_s, self.boarding_s_per_min, self.dwell_noise_s, self.bus_dispatch_jitter_s) < 0:
            raise TrafficScenarioError("bus dwell and jitter parameters must be nonnegative")
        if self.dwell_noise_s > self.dwell_base_s:
            raise TrafficScenarioError("dwell noise cannot exceed the base dwell")


# --------------------------------------------------------------------------
# state


@dataclass
class Vehicle:
    vid: int
    entered: int
    arrived: int = 0
    delay: float = 0.0
    bus: int | None = None


@dataclass
class SignalState:
    phase: str = NS_GREEN
    elapsed: int = 0
    target: str | None = None  # phase after an all-red
    stage: int | None = None  # fixed-time ring position
    extension: int = 0
    last_walk_end: int = 0
    red_controller: str = "adaptive"  # controller running when the current pedestrian red began
    served: dict = field(default_factory=lambda: {NS_GREEN: 0, EW_GREEN: 0, PED_WALK: 0})


@dataclass
class Network:
    """Mutable simulation state."""

    scenario: TrafficScenario
    t: int = 0
    queues: list[list[deque]] = field(default_factory=list)
    transit: list[list[deque]] = field(default_factory=list)
    credit: np.ndarray = field(default_factory=lambda: np.zeros((SIZE * SIZE, 4)))
    turn_acc: np.ndarray = field(default_factory=lambda: np.zeros((SIZE * SIZE, 4)))
    signals: list[SignalState] = field(default_factory=list)
    peds: list[deque] = field(default_factory=list)
    ped_acc: np.ndarray = field(default_factory=lambda: np.zeros(SIZE * SIZE))
    veh_acc: dict = field(default_factory=dict)
    dwelling: list = field(default_factory=list)  # (release_t, node, direction, vehicle)
    generated: int = 0
    exited: int = 0
    delays: list[float] = field(default_factory=list)
    ped_waits: list[tuple[int, int, float]] = field(default_factory=list)  # (served_t, node, wait)
    ped_reds: list[tuple[int, int, int, str]] = field(default_factory=list)  # (node, start, end, controller)
    bus_exits: list[tuple[int, int]] = field(default_factory=list)  # (bus, t)
    stop_departures: dict[int, int] = field(default_factory=dict)  # corridor stop -> last bus departure
    buses_dispatched: int = 0
    controller: str = "adaptive"

    def __post_init__(self) -> None:
        n = SIZE * SIZE
        self.queues = [[deque() for _ in range(4)] for _ in range(n)]
        self.transit = [[deque() for _ in range(4)] for _ in range(n)]
        self.signals = [SignalState() for _ in range(n)]
        self.peds = [deque() for _ in range(n)]
        self.veh_acc = {name: 0.0 for name in self.scenario.demand.vehicle_rates}

    def in_network(self) -> int:
        queued = sum(len(q) for row in self.queues for q in row)
        moving = sum(len(q) for row in self.transit for q in row)
        return queued + moving + len(self.dwelling)

    def queue_len(self, i: int | None, d: int) -> int:
        return 0 if i is None else len(self.queues[i][d])

    def bus_near(self, i: int, d: int, horizon: int) -> bool:
        if any(v.bus is not None for v in self.queues[i][d]):
            return True
        return any(v.bus is not None and ready - self.t <= horizon for ready, v in self.transit[i][d])


# --------------------------------------------------------------------------
# controllers


def phase_pressure(net: Network, i: int, phase: str) -> float:
    approaches = NS_PHASE if phase == NS_GREEN else EW_PHASE
    return float(sum(net.queue_len(i, d) - net.queue_len(downstream(i, d), d) for d in approaches))


def pedestrian_call(net: Network, i: int) -> bool:
    """Whether the adaptive controller serves the exclusive walk now.

    The walk phase holds every approach, so it is called only when weighted
    pedestrian demand outweighs every vehicle on the approach links (queued
    or approaching), or when the oldest pedestrian has reached the max-out
    wait.
    """
    timing = net.scenario.timing
    peds = net.peds[i]
    if not peds:
        return False
    if net.t - peds[0] >= timing.ped_max_wait:
        return True
    vehicles = sum(len(q) for q in net.queues[i]) + sum(len(q) for q in net.transit[i])
    return timing.ped_weight * len(peds) > vehicles


def _begin(sig: SignalState, phase: str, clearance: int) -> None:
    if clearance > 0 and sig.phase != ALL_RED:
        sig.phase, sig.target, sig.elapsed = ALL_RED, phase, 0
    else:
        sig.phase, sig.target, sig.elapsed = phase, None, 0


def adaptive_control_step(net: Network, i: int) -> None:
    """Max-pressure phase choice at one intersection, run once per second."""
    timing = net.scenario.timing
    sig = net.signals[i]
    sig.stage = None
    if sig.phase == ALL_RED:
        if sig.elapsed >= timing.clearance:
            _begin(sig, sig.target, 0)
        return
    if sig.phase == PED_WALK:
        if sig.elapsed >= timing.ped_phase:
            ns, ew = phase_pressure(net, i, NS_GREEN), phase_pressure(net, i, EW_GREEN)
            _begin(sig, EW_GREEN if ew > ns else NS_GREEN, timing.clearance)
        return
    # decisions are taken at slot boundaries, one slot being min_green long
    if sig.elapsed < timing.min_green or sig.elapsed % timing.min_green:
        return
    if pedestrian_call(net, i):
        _begin(sig, PED_WALK, timing.clearance)
        return
    pressures = {NS_GREEN: phase_pressure(net, i, NS_GREEN), EW_GREEN: phase_pressure(net, i, EW_GREEN)}
    other = EW_GREEN if sig.phase == NS_GREEN else NS_GREEN
    if pressures[other] > pressures[sig.phase] or sig.elapsed >= timing.max_green:
        _begin(sig, other, timing.clearance)


def fixed_plan(timing: SignalTiming) -> list[tuple[str, int]]:
    c = timing.clearance
    return [
        (NS_GREEN, timing.fixed_ns),
        (ALL_RED, c),
        (EW_GREEN, timing.fixed_ew),
        (ALL_RED, c),
        (PED_WALK, timing.ped_phase),
        (ALL_RED, c),
    ]


def _red_if_extended(net: Network, i: int, extra: int) -> int:
    """Pedestrian red at the next walk if EW green runs ``extra`` more seconds."""
    timing = net.scenario.timing
    return net.t - net.signals[i].last_walk_end + extra + timing.clearance


def tsp_adjust(net: Network, i: int, plan: Sequence[tuple[str, int]]) -> bool:
    """Transit priority on a corridor intersection; True when it changed the plan.

    Extends the corridor green one second at a time (up to ``tsp_cap``) while
    a bus is within the detection horizon, or truncates the cross-street
    green after ``tsp_min_green`` so the bus gets an early green. Neither
    adjustment may push pedestrian red past its limit.
    """
    timing = net.scenario.timing
    sig = net.signals[i]
    bus_dir = EB
    phase, length = plan[sig.stage]
    if phase == EW_GREEN and sig.elapsed >= length + sig.extension:
        if (
            sig.extension < timing.tsp_cap
            and net.bus_near(i, bus_dir, timing.tsp_detect)
            and _red_if_extended(net, i, 1) <= timing.ped_red_limit
        ):
            sig.extension += 1
            return True
    if phase == NS_GREEN and timing.tsp_min_green <= sig.elapsed < length:
        if net.bus_near(i, bus_dir, timing.tsp_detect):
            sig.stage = (sig.stage + 1) % len(plan)
            sig.phase, sig.elapsed, sig.target = plan[sig.stage][0], 0, None
            return True
    return False


def fixed_time_ped_recall_step(net: Network, i: int, tsp: bool = False) -> None:
    """Advance the fixed ring at one intersection, run once per second."""
    timing = net.scenario.timing
    plan = fixed_plan(timing)
    sig = net.signals[i]
    if sig.stage is None:
        # engage: finish any walk in progress, otherwise clear to the walk phase
        if sig.phase == PED_WALK:
            sig.stage = 4
        else:
            sig.stage, sig.phase, sig.elapsed, sig.target = 3, ALL_RED, 0, None
        sig.extension = 0
        return
    if tsp and i in net.scenario.network.corridor and tsp_adjust(net, i, plan):
        return
    phase, length = plan[sig.stage]
    if sig.elapsed >= length + (sig.extension if phase == EW_GREEN else 0):
        sig.stage = (sig.stage + 1) % len(plan)
        sig.phase, sig.elapsed, sig.target = plan[sig.stage][0], 0, None
        sig.extension = 0


# --------------------------------------------------------------------------
# dynamics


def _bus_draws(scenario: TrafficScenario) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(scenario.seed)
    headway = scenario.demand.headway_target_min * 60
    n = int(scenario.horizon_s // headway) + 1
    jitter = rng.uniform(-scenario.bus_dispatch_jitter_s, scenario.bus_dispatch_jitter_s, n)
    noise = rng.uniform(-scenario.dwell_noise_s, scenario.dwell_noise_s, size=(n, SIZE))
    return jitter, noise


def _arrive(net: Network, i: int, d: int, v: Vehicle, t: int) -> None:
    net.transit[i][d].append((t + net.scenario.network.link_travel_time, v))


def bus_dwell(net: Network, stop: int, bus: int, noise: np.ndarray) -> int:
    sc = net.scenario
    last = net.stop_departures.get(stop)
    since = sc.demand.headway_target_min if last is None else (net.t - last) / 60.0
    return max(int(round(sc.dwell_base_s + sc.boarding_s_per_min * since + noise[bus, stop])), 0)


def _depart(net: Network, i: int, d: int, v: Vehicle, noise: np.ndarray) -> None:
    v.delay += net.t - v.arrived
    nxt = downstream(i, d)
    if v.bus is not None and i in net.scenario.network.corridor:
        col = i % SIZE
        release = net.t + bus_dwell(net, col, v.bus, noise)
        net.stop_departures[col] = release
        net.dwelling.append((release, i, d, v))
        return
    if v.bus is None and nxt is not None:
        net.turn_acc[i, d] += net.scenario.network.turn_off_fraction
        if net.turn_acc[i, d] >= 1.0:
            net.turn_acc[i, d] -= 1.0
            nxt = None
    _leave(net, i, d, v, nxt)


def _leave(net: Network, i: int, d: int, v: Vehicle, nxt: int | None) -> None:
    if nxt is None:
        net.exited += 1
        if v.bus is None:
            net.delays.append(v.delay)
        else:
            net.bus_exits.append((v.bus, net.t))
    else:
        _arrive(net, nxt, d, v, net.t)


def _serve_walk(net: Network, i: int) -> None:
    sig = net.signals[i]
    peds = net.peds[i]
    while peds:
        net.ped_waits.append((net.t, i, float(net.t - peds.popleft())))
    if sig.elapsed == 0:
        net.ped_reds.append((i, sig.last_walk_end, net.t, sig.red_controller))


def step_second(net: Network, jitter: np.ndarray, dwell: np.ndarray) -> None:
    sc = net.scenario
    dem = sc.demand
    t = net.t
    n = SIZE * SIZE
    # vehicle and bus arrivals at network entries
    for name, series in dem.vehicle_rates.items():
        net.veh_acc[name] += dem.rate(series, t)
        while net.veh_acc[name] >= 1.0:
            net.veh_acc[name] -= 1.0
            d, k = DIRECTIONS.index(name[:2]), int(name[2:])
            net.generated += 1
            _arrive(net, entry_node(d, k), d, Vehicle(net.generated, t), t)
    headway = dem.headway_target_min * 60
    due = net.buses_dispatched * headway + jitter[net.buses_dispatched] if net.buses_dispatched < len(jitter) else math.inf
    if t >= due:
        net.generated += 1
        bus = Vehicle(net.generated, t, bus=net.buses_dispatched)
        net.buses_dispatched += 1
        _arrive(net, entry_node(EB, sc.network.corridor_row), EB, bus, t)
    # buses finishing dwell
    if net.dwelling:
        keep = []
        for release, i, d, v in net.dwelling:
            if release <= t:
                _leave(net, i, d, v, downstream(i, d))
            else:
                keep.append((release, i, d, v))
        net.dwelling = keep
    # links to stop lines
    for i in range(n):
        for d in range(4):
            tr = net.transit[i][d]
            while tr and tr[0][0] <= t:
                _, v = tr.popleft()
                v.arrived = t
                net.queues[i][d].append(v)
    # pedestrians
    for i in range(n):
        rate = dem.rate(dem.ped_rates_by_site.get(i, dem.ped_rates), t) * sc.network.crosswalks_per_intersection
        net.ped_acc[i] += rate
        while net.ped_acc[i] >= 1.0:
            net.ped_acc[i] -= 1.0
            net.peds[i].append(t)
    # controllers
    for i in range(n):
        if net.controller == "adaptive":
            adaptive_control_step(net, i)
        else:
            fixed_time_ped_recall_step(net, i, tsp=net.controller == "fixed_time_tsp")
    # service
    walk = sc.timing.walk
    for i in range(n):
        sig = net.signals[i]
        if sig.phase == PED_WALK:
            if sig.elapsed < walk:
                _serve_walk(net, i)
            if sig.elapsed == walk - 1:
                sig.last_walk_end = t + 1
                sig.red_controller = net.controller
        approaches = NS_PHASE if sig.phase == NS_GREEN else EW_PHASE if sig.phase == EW_GREEN else ()
        for d in approaches:
            q = net.queues[i][d]
            net.credit[i, d] = min(net.credit[i, d] + sc.network.saturation_flow, 1.0 + sc.network.saturation_flow)
            while q and net.credit[i, d] >= 1.0:
                net.credit[i, d] -= 1.0
                _depart(net, i, d, q.popleft(), dwell)
            if not q:
                net.credit[i, d] = min(net.credit[i, d], 1.0)
        for d in range(4):
            if d not in approaches:
                net.credit[i, d] = 0.0
        sig.elapsed += 1
        sig.served[sig.phase] = sig.served.get(sig.phase, 0) + 1
    net.t += 1


# --------------------------------------------------------------------------
# monitors and metrics


def ped_quality(net: Network, window_s: int, min_samples: int) -> float | None:
    """Share of sensitive-site pedestrian waits within 60 s over the window.

    Pedestrians still waiting past 60 s count as failures; with fewer than
    ``min_samples`` observations there is no reading.
    """
    sites = set(net.scenario.network.sensitive_sites)
    lo = net.t - window_s
    ok = total = 0
    for served, i, wait in reversed(net.ped_waits):
        if served < lo:
            break
        if i in sites:
            total += 1
            ok += wait <= 60.0
    for i in sites:
        total += sum(1 for a in net.peds[i] if net.t - a > 60)
    if total < min_samples:
        return None
    return ok / total


def headways(net: Network) -> list[tuple[int, float]]:
    """(exit time, headway in minutes) for consecutive corridor buses."""
    exits = sorted(net.bus_exits, key=lambda e: e[0])
    return [(exits[k][1], (exits[k][1] - exits[k - 1][1]) / 60.0) for k in range(1, len(exits))]


def bus_quality(net: Network) -> float | None:
    sc = net.scenario
    recent = [h for t, h in headways(net) if t >= net.t - sc.headway_window_s]
    if not recent:
        return None
    target = sc.demand.headway_target_min
    return sum(abs(h - target) <= sc.headway_tolerance_min for h in recent) / len(recent)


def monitor_vector(net: Network, k: int) -> MonitorVector:
    quality = {}
    q = ped_quality(net, net.scenario.quality_window_s, net.scenario.min_ped_samples)
    if q is not None:
        quality[PED_SERVICE] = q
    b = bus_quality(net)
    if b is not None:
        quality[BUS_SERVICE] = b
    return MonitorVector(t=k, quality=quality)


@dataclass(frozen=True)
class TrafficReport:
    vehicle_delay_mean: float
    vehicle_delay_median: float
    ped_wait_mean: float
    ped_wait_median: float
    headway_dev_mean: float
    headway_dev_median: float
    headway_dev_p95: float
    vehicles_generated: int
    vehicles_exited: int
    vehicles_in_network: int
    max_ped_red_fallback: int | None


def _stat(values: Sequence[float], fn) -> float:
    return float(fn(values)) if len(values) else 0.0


def traffic_report(net: Network) -> TrafficReport:
    sites = set(net.scenario.network.sensitive_sites)
    waits = [w for _, i, w in net.ped_waits if i in sites]
    # still waiting at the horizon: count the time waited so far
    waits += [float(net.t - a) for i in sites for a in net.peds[i]]
    target = net.scenario.demand.headway_target_min
    devs = [abs(h - target) for _, h in headways(net)]
    reds = [end - start for _, start, end, ctl in net.ped_reds if ctl != "adaptive"]
    return TrafficReport(
        vehicle_delay_mean=_stat(net.delays, statistics.fmean),
        vehicle_delay_median=_stat(net.delays, statistics.median),
        ped_wait_mean=_stat(waits, statistics.fmean),
        ped_wait_median=_stat(waits, statistics.median),
        headway_dev_mean=_stat(devs, statistics.fmean),
        headway_dev_median=_stat(devs, statistics.median),
        headway_dev_p95=float(np.percentile(devs, 95)) if devs else 0.0,
        vehicles_generated=net.generated,
        vehicles_exited=net.exited,
        vehicles_in_network=net.in_network(),
        max_ped_red_fallback=max(reds) if reds else None,
    )


# --------------------------------------------------------------------------
# runs


class AdaptivePolicy:
    policy_id = "max_pressure_adaptive"
    version = "1.0"

    def act(self, net: Network) -> str:
        return "adaptive"


FALLBACKS = {
    "fixed_time_ped_recall": lambda net: "fixed_time",
    "tsp_enabled": lambda net: "fixed_time_tsp",
}

FALLBACK_DESCRIPTIONS = {
    "fixed_time_ped_recall": "fixed-time signal plans with a pedestrian walk phase every cycle",
    "tsp_enabled": "fixed-time plans with pedestrian recall plus bus priority on the transit corridor",
}


@dataclass
class TrafficRun:
    network: Network
    report: TrafficReport
    run: SimulationReport | None
    trigger_s: int | None = None


def simulate_traffic(
    sc: TrafficScenario,
    config: GovernanceConfig | None = None,
    mode: Mode = "actuated",
    gated: bool = True,
    controller: str | None = None,
) -> TrafficRun:
    """Run the grid. Ungated runs use ``controller`` throughout (adaptive by default)."""
    net = Network(sc)
    jitter, dwell = _bus_draws(sc)
    gate = None
    if gated:
        gate = Gate(
            config=config,
            domain="transport",
            policy=AdaptivePolicy(),
            fallbacks=FALLBACKS,
            scenario_id=sc.scenario_id,
            mode=mode,
            fallback_descriptions=FALLBACK_DESCRIPTIONS,
        )
    else:
        net.controller = controller or "adaptive"
    trigger = None
    k = 0
    while net.t < sc.horizon_s:
        if gate is not None and net.t % sc.decision_interval_s == 0:
            decision = gate.step(net, monitor_vector(net, k), sc.start + timedelta(seconds=net.t))
            if decision.onset and trigger is None:
                trigger = net.t
            net.controller = decision.applied_action
            k += 1
        step_second(net, jitter, dwell)
    run = None
    if gate is not None:
        gate.finish(sc.start + timedelta(seconds=net.t))
        run = SimulationReport.from_gate(gate, {})
    return TrafficRun(net, traffic_report(net), run, trigger)


def check_conservation(net: Network) -> None:
    if net.generated != net.exited + net.in_network():
        raise InvariantError(
            f"vehicle balance broken: generated {net.generated}, exited {net.exited}, in network {net.in_network()}"
        )


@dataclass
class TrafficCaseResult:
    scenario: TrafficScenario
    baseline: TrafficRun
    gated: TrafficRun

    def table(self) -> list[dict]:
        """Vehicle delay and sensitive-site pedestrian wait, in seconds."""
        return [
            {
                "variant": name,
                "veh_mean_delay": round(r.vehicle_delay_mean, 1),
                "veh_median_delay": round(r.vehicle_delay_median, 1),
                "ped_mean_wait": round(r.ped_wait_mean, 1),
                "ped_median_wait": round(r.ped_wait_median, 1),
            }
            for name, r in (("Baseline", self.baseline.report), ("R2O", self.gated.report))
        ]

    def headway_table(self) -> list[dict]:
        """Bus headway deviation in minutes."""
        return [
            {
                "variant": name,
                "mean": round(r.headway_dev_mean, 2),
                "median": round(r.headway_dev_median, 2),
                "p95": round(r.headway_dev_p95, 2),
            }
            for name, r in (("Baseline", self.baseline.report), ("R2O", self.gated.report))
        ]

    @property
    def trigger_time(self) -> datetime | None:
        s = self.gated.trigger_s
        return None if s is None else self.scenario.start + timedelta(seconds=s)


def run_traffic_case(sc: TrafficScenario, config: GovernanceConfig, mode: Mode = "actuated") -> TrafficCaseResult:
    baseline = simulate_traffic(sc, gated=False)
    gated = simulate_traffic(sc, config, mode)
    for r in (baseline, gated):
        check_conservation(r.network)
    b, g = baseline.report, gated.report
    gated.run.metrics = {
        "vehicle_delay_mean_baseline_s": round(b.vehicle_delay_mean, 3),
        "vehicle_delay_mean_r2o_s": round(g.vehicle_delay_mean, 3),
        "ped_wait_median_baseline_s": round(b.ped_wait_median, 3),
        "ped_wait_median_r2o_s": round(g.ped_wait_median, 3),
        "headway_dev_mean_baseline_min": round(b.headway_dev_mean, 3),
        "headway_dev_mean_r2o_min": round(g.headway_dev_mean, 3),
        "headway_dev_p95_baseline_min": round(b.headway_dev_p95, 3),
        "headway_dev_p95_r2o_min": round(g.headway_dev_p95, 3),
        "max_ped_red_fallback_s": g.max_ped_red_fallback,
    }
    return TrafficCaseResult(sc, baseline, gated)


# --------------------------------------------------------------------------
# fixtures and scenario files


def _flat(rate: float, periods: int = 8) -> tuple[float, ...]:
    return tuple([rate] * periods)


def default_fixture(seed: int = 0, ped_rate: float = 0.004, ew_rate: float = 0.12, ns_rate: float = 0.12) -> TrafficScenario:
    """Peak-period grid with balanced cross flows and steady pedestrian demand."""
    rates = {}
    for k in range(SIZE):
        rates[f"EB{k}"] = _flat(ew_rate)
        rates[f"WB{k}"] = _flat(ew_rate)
        rates[f"SB{k}"] = _flat(ns_rate)
        rates[f"NB{k}"] = _flat(ns_rate)
    return TrafficScenario(
        scenario_id="case3-grid",
        network=GridNetwork(),
        demand=TrafficDemand(vehicle_rates=rates, ped_rates=_flat(ped_rate)),
        seed=seed,
    )


def scenario_to_dict(sc: TrafficScenario) -> dict:
    n, d, tm = sc.network, sc.demand, sc.timing
    return {
        "case": "traffic",
        "scenario_id": sc.scenario_id,
        "start": sc.start.isoformat(),
        "seed": sc.seed,
        "horizon_s": sc.horizon_s,
        "network": {
            "link_travel_time": n.link_travel_time,
            "saturation_flow": n.saturation_flow,
            "corridor_row": n.corridor_row,
            "sensitive_sites": list(n.sensitive_sites),
            "crosswalks_per_intersection": n.crosswalks_per_intersection,
        },
        "demand": {
            "vehicle_rates": {k: list(v) for k, v in d.vehicle_rates.items()},
            "ped_rates": list(d.ped_rates),
            "ped_rates_by_site": {str(k): list(v) for k, v in d.ped_rates_by_site.items()},
            "headway_target_min": d.headway_target_min,
            "period_s": d.period_s,
        },
        "timing": {k: getattr(tm, k) for k in tm.__dataclass_fields__},
    }


def scenario_from_dict(data: dict) -> TrafficScenario:
    net = data.get("network", {})
    dem = data["demand"]
    base = TrafficScenario(
        scenario_id=data["scenario_id"],
        network=GridNetwork(
            **{k: v for k, v in net.items() if k != "sensitive_sites"},
            **({"sensitive_sites": tuple(net["sensitive_sites"])} if "sensitive_sites" in net else {}),
        ),
        demand=TrafficDemand(
            vehicle_rates={k: tuple(v) for k, v in dem["vehicle_rates"].items()},
            ped_rates=tuple(dem["ped_rates"]),
            ped_rates_by_site={int(k): tuple(v) for k, v in dem.get("ped_rates_by_site", {}).items()},
            headway_target_min=float(dem.get("headway_target_min", 5.0)),
            period_s=int(dem.get("period_s", 900)),
        ),
        timing=SignalTiming(**data.get("timing", {})),
        seed=int(data.get("seed", 0)),
    )
    extra = {}
    if "horizon_s" in data:
        extra["horizon_s"] = int(data["horizon_s"])
    if "start" in data:
        extra["start"] = datetime.fromisoformat(data["start"])
    return replace(base, **extra)
