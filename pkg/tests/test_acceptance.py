"""Acceptance criteria, one check per criterion.

Each check prints a single ``PASS``/``FAIL`` line, then asserts. Run
``python3 tests/test_acceptance.py`` to get just the summary lines.
"""

from __future__ import annotations

import tempfile
import time
from datetime import timedelta
from pathlib import Path

import numpy as np
import pytest

from r2o.artifacts import make_fixture_workspace, run_review_gate
from r2o.config import Level, canonical_document, config_to_dict, default_config, parse_config, serialize_config
from r2o.monitors import GroupOutcome, window_disparity
from r2o.sim import building, power, traffic


def _report(number: int, ok: bool, detail: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'}  criterion {number}: {detail}", flush=True)


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# --------------------------------------------------------------------------
# 1. clamped per-step rates against the window bound


def clamped_window(rng: np.random.Generator, tau: float) -> list[tuple[GroupOutcome, GroupOutcome]]:
    """A random window whose every step obeys h_g/b_g <= tau * h_c/b_c."""
    series = []
    for _ in range(int(rng.integers(2, 25))):
        b_g, b_c = rng.uniform(0.1, 10.0, 2)
        h_c = rng.uniform(0.0, 1.0) * b_c
        h_g = min(rng.uniform(0.0, 1.0) * 2 * tau * b_g, tau * b_g * h_c / b_c)
        series.append((GroupOutcome("g", h_g, b_g, True), GroupOutcome("c", h_c, b_c)))
    return series


def check_window_bound():
    def run():
        rng = np.random.default_rng(20250115)
        out = {}
        for tau in (1.0, 1.2, 2.0):
            values = [window_disparity(clamped_window(rng, tau)) for _ in range(1000)]
            out[tau] = (sum(v > tau + 1e-9 for v in values), max(values))
        return out

    results, elapsed = _timed(run)
    ok = all(n == 0 for n, _ in results.values()) and elapsed < 5.0
    detail = ", ".join(f"tau={t:g}: {n}/1000 over, worst {w:.3f}" for t, (n, w) in results.items())
    return ok, f"{detail}; {elapsed:.2f} s"


# --------------------------------------------------------------------------
# 2-4. the three cases


def check_power():
    r, elapsed = _timed(lambda: power.run_power_case(power.case1_fixture(0), default_config()))
    b, g = r.baseline, r.gated
    ok = (
        b.disparity >= 5.0
        and g.disparity <= 1.2
        and abs(b.ens_total - g.ens_total) <= 1e-9
        and abs(b.ens_total - 76.51) <= 0.1 * 76.51
        and elapsed < 10.0
    )
    return ok, (
        f"baseline D={b.disparity:.3f}, gated D={g.disparity:.4f}, ENS {b.ens_total:.3f} vs {g.ens_total:.3f} MWh; "
        f"{elapsed:.2f} s"
    )


def check_building():
    r, elapsed = _timed(lambda: building.run_building_case(building.cold_day_fixture(0), default_config()))
    pair = (r.baseline.discomfort_hours_protected, r.gated.discomfort_hours_protected)
    delta = r.gated.energy_delta_kwh
    ok = pair == (2, 0) and delta > 0 and abs(delta - 77.0) <= 0.5 * 77.0 and elapsed < 5.0
    return ok, f"discomfort-hours {pair}, energy delta {delta:+.1f} kWh; {elapsed:.2f} s"


def check_traffic():
    r, elapsed = _timed(lambda: traffic.run_traffic_case(traffic.default_fixture(0), default_config()))
    b, g = r.baseline.report, r.gated.report
    extra = g.vehicle_delay_mean - b.vehicle_delay_mean
    ok = (
        b.ped_wait_median > 60.0
        and g.ped_wait_median <= 60.0
        and 0.0 < extra <= 15.0
        and g.headway_dev_mean < b.headway_dev_mean
        and g.headway_dev_p95 < b.headway_dev_p95
        and elapsed < 60.0
    )
    return ok, (
        f"ped median {b.ped_wait_median:.1f}->{g.ped_wait_median:.1f} s, veh delay {extra:+.1f} s, "
        f"headway mean {b.headway_dev_mean:.2f}->{g.headway_dev_mean:.2f}, "
        f"p95 {b.headway_dev_p95:.2f}->{g.headway_dev_p95:.2f} min; {elapsed:.2f} s"
    )


# --------------------------------------------------------------------------
# 5. configuration


def check_config():
    cfg = parse_config(canonical_document())
    th = cfg.thresholds
    durations = [cfg.max_duration(lv) for lv in Level]
    again = parse_config(serialize_config(cfg))
    ok = (
        th.disparity == 1.2
        and th.hazard_per_hr == 1e-4
        and th.downtime_minutes == 30
        and durations == [timedelta(hours=4), timedelta(hours=72), timedelta(days=30)]
        and again == cfg
        and config_to_dict(again) == config_to_dict(cfg)
    )
    return ok, f"tau_D={th.disparity:g} tau_R={th.hazard_per_hr:g} tau_A={th.downtime_minutes:g}, durations {[str(d) for d in durations]}, round trip {'equal' if again == cfg else 'differs'}"


# --------------------------------------------------------------------------
# 6. gating contract


def _runs(mode: str):
    cfg = default_config()
    return {
        "power": power.run_power_case(power.case1_fixture(0), cfg, mode).run,
        "building": building.run_building_case(building.cold_day_fixture(0), cfg, mode).run,
        "traffic": traffic.run_traffic_case(traffic.default_fixture(0), cfg, mode).gated.run,
    }


def check_gating_contract():
    cfg = default_config()
    actuated, shadow = _runs("actuated"), _runs("shadow")
    problems = []
    for name, run in actuated.items():
        problems += [f"{name}: {e}" for e in run.contract_errors(cfg)]
        if run.fallback_steps == 0:
            problems.append(f"{name}: fallback never actuated")
    for name, run in shadow.items():
        problems += [f"{name} shadow: {e}" for e in run.contract_errors(cfg)]
        if run.would_be_triggers == 0:
            problems.append(f"{name} shadow: no would-be trigger recorded")
        starts = [r for r in run.audit if r.event == "override_started"]
        if len(starts) != run.would_be_triggers or any(r.mode != "shadow" for r in starts):
            problems.append(f"{name} shadow: would-be triggers not all logged")
    steps = {n: r.fallback_steps for n, r in actuated.items()}
    shadow_steps = {n: r.fallback_steps for n, r in shadow.items()}
    detail = f"fallback steps {steps}, shadow {shadow_steps}"
    return not problems, detail + ("; " + "; ".join(problems) if problems else "")


# --------------------------------------------------------------------------
# 7. review gate


def check_review_gate():
    cfg = default_config()
    items = {"model_card": "docs/model_card.md", "datasheet": "docs/datasheet.md"}
    items.update({f"pre_deploy.{s}": f"reviews/{s}.done" for s in cfg.reviews.pre_deploy})
    problems = []
    with tempfile.TemporaryDirectory() as tmp:
        root = make_fixture_workspace(Path(tmp) / "complete", cfg)
        if not run_review_gate(root, cfg).passed:
            problems.append("complete workspace failed")
        for k, (check, rel) in enumerate(items.items()):
            ws = make_fixture_workspace(Path(tmp) / f"ws{k}", cfg)
            (ws / rel).unlink()
            failed = run_review_gate(ws, cfg).failed
            if failed != [check]:
                problems.append(f"removing {rel} failed {failed}")
    return not problems, f"complete workspace plus {len(items)} removals" + ("; " + "; ".join(problems) if problems else "")


# --------------------------------------------------------------------------
# 8. determinism


def _artifacts(seed: int) -> dict[str, str]:
    cfg = default_config()
    runs = {
        "power": power.run_power_case(power.case1_fixture(seed), cfg).run,
        "building": building.run_building_case(building.cold_day_fixture(seed), cfg).run,
        "traffic": traffic.run_traffic_case(traffic.default_fixture(seed), cfg).gated.run,
    }
    return {n: r.to_json() + r.audit_jsonl() for n, r in runs.items()}


def check_determinism():
    first, second = _artifacts(7), _artifacts(7)
    differing = [n for n in first if first[n] != second[n]]
    return not differing, "byte-identical reports and audit logs" if not differing else f"differs: {differing}"


CHECKS = {
    1: check_window_bound,
    2: check_power,
    3: check_building,
    4: check_traffic,
    5: check_config,
    6: check_gating_contract,
    7: check_review_gate,
    8: check_determinism,
}


@pytest.mark.parametrize("number", sorted(CHECKS))
def test_criterion(number, capsys):
    ok, detail = CHECKS[number]()
    with capsys.disabled():
        print()
        _report(number, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    for n, check in CHECKS.items():
        _report(n, *check())
