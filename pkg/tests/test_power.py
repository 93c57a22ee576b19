from __future__ import annotations

import json

import numpy as np
import pytest

from r2o.sim import power
from r2o.sim.power import (
    GENERAL,
    PROTECTED,
    STEPS,
    FeederLoad,
    InfeasibleDispatchError,
    PowerScenario,
    baseline_dispatch,
    case1_fixture,
    check_plan,
    equity_rotation_fallback,
    equity_rotation_step,
    plan_disparity,
    run_power_case,
)


def flat(value):
    return np.full(STEPS, float(value))


def two_feeders(shortfall_at=None, shortfall=1.0):
    loads = (FeederLoad("P", PROTECTED, flat(2.0)), FeederLoad("G", GENERAL, flat(2.0)))
    cap = flat(4.0)
    if shortfall_at is not None:
        cap[shortfall_at] -= shortfall
    return loads, cap


def test_no_shortfall_gives_zero_plan():
    loads, cap = two_feeders()
    assert not baseline_dispatch(loads, cap, {PROTECTED: 0.5, GENERAL: 1.0}).curtailed.any()
    assert not equity_rotation_fallback(loads, cap, 1.2).curtailed.any()


def test_two_feeder_greedy_sheds_cheaper_protected_feeder():
    loads, cap = two_feeders(shortfall_at=10)
    plan = baseline_dispatch(loads, cap, {PROTECTED: 0.5, GENERAL: 1.0})
    assert plan.curtailed[0, 10] == pytest.approx(1.0)
    assert plan.curtailed[1, 10] == 0.0
    assert plan.curtailed.sum() == pytest.approx(1.0)


def test_unservable_shortfall_raises():
    loads = (FeederLoad("P", PROTECTED, flat(1.0), "clinic", 0.8), FeederLoad("G", GENERAL, flat(1.0)))
    cap = flat(2.0)
    cap[5] = 0.1
    with pytest.raises(InfeasibleDispatchError):
        baseline_dispatch(loads, cap, {PROTECTED: 0.5, GENERAL: 1.0})


def test_feeder_validation():
    with pytest.raises(ValueError):
        FeederLoad("X", GENERAL, np.ones(10))
    with pytest.raises(ValueError):
        FeederLoad("X", GENERAL, -flat(1))
    with pytest.raises(ValueError):
        FeederLoad("X", "other", flat(1))


def test_equity_step_respects_per_step_cap():
    loads, _ = two_feeders()
    alloc, note = equity_rotation_step(loads, 1.0, 1.2, 0)
    assert note is None
    ratio = (alloc[0] / 2.0) / (alloc[1] / 2.0)
    assert ratio <= 1.2 + 1e-9
    assert alloc.sum() == pytest.approx(1.0)


def test_equity_step_records_note_when_cap_infeasible():
    loads = (FeederLoad("P", PROTECTED, flat(2.0)), FeederLoad("G", GENERAL, flat(2.0), None, 0.9))
    alloc, note = equity_rotation_step(loads, 1.0, 1.2, 0)
    assert note and "infeasible" in note
    assert alloc.sum() == pytest.approx(1.0)


def test_reserved_feeders_keep_minimum_service(power_case):
    s = power_case.scenario
    for i, f in enumerate(s.feeders):
        if f.reserved:
            served = f.demand - power_case.gated_plan.curtailed[i]
            assert (served >= f.demand * f.min_service_fraction - 1e-9).all()
    assert power_case.gated.protected_min_violations == 0


def test_case1_baseline_is_calibrated(power_case):
    assert power_case.baseline.disparity >= 5.0
    assert abs(power_case.baseline.ens_total - 76.51) <= 0.1 * 76.51


def test_case1_gated_bounds_and_constant_curtailment(power_case):
    assert power_case.gated.disparity <= 1.2
    assert power_case.gated.ens_total == pytest.approx(power_case.baseline.ens_total, abs=1e-9)
    for r in (power_case.baseline, power_case.gated):
        assert r.ens_total == pytest.approx(r.ens_protected + r.ens_general, abs=1e-9)


def test_plans_conserve_energy_and_respect_capacity(power_case):
    for plan in (power_case.baseline_plan, power_case.gated_plan):
        assert check_plan(power_case.scenario, plan) == []


def test_fallback_windows_meet_cap(power_case):
    windows = power_case.window_disparities()
    assert windows
    assert max(windows) <= 1.2 + 1e-9


def test_fallback_engages_from_first_violation(power_case):
    trace = power_case.run.trace
    first = next(k for k, s in enumerate(trace) if s["violations"])
    assert trace[first]["onset"]
    assert all(s["action_source"] == "fallback" for s in trace[first:])


def test_shadow_actuates_nothing(config):
    r = run_power_case(case1_fixture(0), config, mode="shadow")
    assert r.run.fallback_steps == 0
    assert r.run.would_be_triggers >= 1
    assert r.run.audit[0].level == "L2"
    assert r.gated.disparity == pytest.approx(r.baseline.disparity)


@pytest.mark.parametrize("scale", [0.5, 1.0])
@pytest.mark.parametrize("tau", [1.0, 1.2, 1.5, 2.0])
def test_sweep_points_stay_under_cap(config, scale, tau):
    from dataclasses import replace

    cfg = replace(config, thresholds=replace(config.thresholds, disparity=tau))
    r = run_power_case(case1_fixture(0, shortfall_scale=scale), cfg)
    assert r.gated.disparity <= tau + 1e-9
    assert max(r.window_disparities(), default=0.0) <= tau + 1e-9


def test_all_protected_population_has_no_disparity():
    loads = (FeederLoad("P1", PROTECTED, flat(2.0)), FeederLoad("P2", PROTECTED, flat(2.0)))
    cap = flat(4.0)
    cap[3] = 3.0
    plan = baseline_dispatch(loads, cap, {PROTECTED: 0.5, GENERAL: 1.0})
    assert plan_disparity(loads, plan) is None


def test_zero_demand_run_has_unit_disparity(config):
    loads = (FeederLoad("P", PROTECTED, flat(0.0)), FeederLoad("G", GENERAL, flat(0.0)))
    r = run_power_case(PowerScenario("empty", loads, flat(1.0)), config)
    assert r.run.override_count == 0
    assert all(m.disparity == 1.0 for m in r.run.monitors)


def test_scenario_file_round_trip():
    s = case1_fixture(3)
    again = power.scenario_from_dict(json.loads(json.dumps(power.scenario_to_dict(s))))
    assert power.scenario_to_dict(again) == power.scenario_to_dict(s)
