from __future__ import annotations

import math
from datetime import datetime, timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from r2o.config import Thresholds
from r2o.monitors import (
    GroupOutcome,
    MonitorInputError,
    MonitorVector,
    accessibility_downtime,
    disparity_ratio,
    evaluate_thresholds,
    hazard_rate,
    monitors_to_csv,
    window_disparity,
)

T0 = datetime(2025, 1, 15)


def pair(hg, bg, hc, bc):
    return GroupOutcome("A", hg, bg, True), GroupOutcome("B", hc, bc)


def test_ratio_example():
    # 0.2 of baseline vs 0.1 of baseline
    assert disparity_ratio(*pair(2, 10, 3, 30)) == pytest.approx(2.0)


def test_zero_harm_conventions():
    assert disparity_ratio(*pair(0, 10, 0, 10)) == 1.0
    assert disparity_ratio(*pair(1, 10, 0, 10)) == math.inf
    assert disparity_ratio(*pair(0, 10, 1, 10)) == 0.0


@pytest.mark.parametrize("args", [(1, 0, 1, 1), (1, 1, 1, -1), (-1, 1, 1, 1)])
def test_bad_inputs_raise(args):
    with pytest.raises(MonitorInputError):
        disparity_ratio(*pair(*args))


def test_window_sums_before_dividing():
    series = [pair(1, 10, 1, 10), pair(3, 10, 1, 30)]
    assert window_disparity(series) == pytest.approx((4 / 20) / (2 / 40))


def test_empty_window_raises():
    with pytest.raises(MonitorInputError):
        window_disparity([])


@settings(max_examples=200, deadline=None)
@given(
    st.floats(0.5, 3.0),
    st.floats(0.1, 0.9),
    st.lists(st.tuples(st.floats(0.0, 1.0), st.floats(0.01, 10.0)), min_size=1, max_size=30),
)
def test_clamped_steps_bound_window_when_shares_fixed(tau, share, steps):
    """With the two groups' baselines in a fixed proportion, per-step clamping
    bounds the window ratio."""
    series = []
    for frac, scale in steps:
        bg, bc = share * scale, (1 - share) * scale
        hc = 0.1 * bc
        hg = min(frac * bg, tau * bg * hc / bc)
        series.append(pair(hg, bg, hc, bc))
    assert window_disparity(series) <= tau + 1e-9


def test_clamped_steps_can_break_window_when_shares_drift():
    """Both steps sit exactly at the per-step cap, yet the window does not."""
    tau = 1.2
    s1 = pair(1.2, 1.0, 1.0, 1.0)
    s2 = pair(0.012, 1.0, 1.0, 100.0)
    assert disparity_ratio(*s1) == pytest.approx(tau)
    assert disparity_ratio(*s2) == pytest.approx(tau)
    assert window_disparity([s1, s2]) > tau + 0.5


def test_downtime_merges_overlaps_and_clips():
    now = T0 + timedelta(hours=24)
    events = [
        (T0 - timedelta(minutes=10), T0 + timedelta(minutes=5)),
        (T0 + timedelta(hours=1), T0 + timedelta(hours=1, minutes=20)),
        (T0 + timedelta(hours=1, minutes=10), T0 + timedelta(hours=1, minutes=30)),
    ]
    assert accessibility_downtime(events, now) == pytest.approx(35.0)


def test_downtime_rejects_reversed_interval():
    with pytest.raises(MonitorInputError):
        accessibility_downtime([(T0, T0 - timedelta(minutes=1))], T0)


def test_hazard_rate_rejects_negative_and_nan():
    assert hazard_rate(2e-4) == 2e-4
    for bad in (-1.0, float("nan")):
        with pytest.raises(MonitorInputError):
            hazard_rate(bad)


def test_thresholds_are_inclusive():
    tau = Thresholds(quality={"svc": 0.8})
    m = MonitorVector(0, disparity=1.2, hazard=1e-4, downtime={"seniors": 30.0}, quality={"svc": 0.8})
    assert [v.monitor for v in evaluate_thresholds(m, tau)] == ["disparity", "hazard", "accessibility", "quality"]
    calm = MonitorVector(0, disparity=1.19, hazard=9e-5, downtime={"seniors": 29.0}, quality={"svc": 0.81})
    assert evaluate_thresholds(calm, tau) == []


def test_infinite_disparity_serializes():
    m = MonitorVector(0, disparity=math.inf)
    (v,) = evaluate_thresholds(m, Thresholds())
    assert v.to_dict()["observed"] == "inf"


def test_monitor_csv_columns():
    text = monitors_to_csv([MonitorVector(0, downtime={"seniors": 1.0}, quality={"bus": 0.95})])
    header = text.splitlines()[0]
    assert header.startswith("t,")
    assert "seniors" in header and "bus" in header
