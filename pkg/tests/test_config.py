from __future__ import annotations

from datetime import timedelta

import pytest

from r2o.config import (
    CONFIG_ENV_VAR,
    ConfigParseError,
    ConfigSchemaError,
    ConfigValidationError,
    Level,
    canonical_document,
    default_config,
    load_config,
    parse_config,
    serialize_config,
    validate_cross_references,
)

THRESHOLDS_ONLY = """
governance:
  r2o:
    thresholds:
      disparity: 1.5
      safety_risk_per_hr: 2.0e-4
      accessibility_downtime_minutes: 45
"""


def test_reference_document_values():
    cfg = parse_config(canonical_document())
    assert cfg.thresholds.disparity == 1.2
    assert cfg.thresholds.hazard_per_hr == 1e-4
    assert cfg.thresholds.downtime_minutes == 30
    assert cfg.levels[Level.L2].fallback == "municipal_safe"
    assert cfg.max_duration(Level.L1) == timedelta(hours=4)
    assert cfg.max_duration(Level.L2) == timedelta(hours=72)
    assert cfg.max_duration(Level.L3) == timedelta(days=30)
    assert cfg.fallbacks["power"] == ("n-1_deterministic", "equity_rotations")
    assert cfg.documentation.model_card is True
    assert "shadow_mode" in cfg.reviews.pre_deploy
    assert cfg.publishing.notices == "open_data_portal"


def test_authorities_follow_levels(config):
    assert config.levels[Level.L1].authority == "operator_stop"
    assert config.levels[Level.L2].authority == "municipal_pause"
    assert config.levels[Level.L3].authority == "civic_board_hold"


def test_quality_floors_default(config):
    assert config.thresholds.quality_floor("bus_headway") == 0.9
    assert config.thresholds.quality_floor("pedestrian_wait_sensitive") == 0.5


def test_round_trip_is_identity():
    cfg = default_config()
    again = parse_config(serialize_config(cfg))
    assert again == cfg
    assert serialize_config(again) == serialize_config(cfg)


def test_thresholds_only_with_defaults():
    cfg = parse_config(THRESHOLDS_ONLY, use_defaults=True)
    assert cfg.thresholds.disparity == 1.5
    assert [cfg.max_duration(lv) for lv in Level] == [timedelta(hours=4), timedelta(hours=72), timedelta(days=30)]


def test_thresholds_only_without_defaults_names_missing_key():
    with pytest.raises(ConfigSchemaError) as exc:
        parse_config(THRESHOLDS_ONLY)
    assert "governance.r2o.levels" in str(exc.value)


def test_negative_threshold_rejected():
    doc = canonical_document().replace("disparity: 1.2", "disparity: -1")
    with pytest.raises(ConfigValidationError):
        parse_config(doc)


def test_malformed_yaml_reports_position():
    with pytest.raises(ConfigParseError) as exc:
        parse_config("governance:\n  r2o: [unclosed\n")
    assert exc.value.line is not None


def test_unknown_key_strict_and_lenient():
    doc = canonical_document().replace("  documentation:", "  colour: blue\n  documentation:")
    with pytest.raises(ConfigSchemaError):
        parse_config(doc)
    cfg = parse_config(doc, strict=False)
    assert any("colour" in w for w in cfg.warnings)


@pytest.mark.parametrize(
    "domain,expected",
    [
        ("power", ["n-1_deterministic", "equity_rotations", "equity_rotations"]),
        ("buildings", ["comfort_bounds", "no_night_setback_protected", "no_night_setback_protected"]),
        ("transport", ["fixed_time_ped_recall", "tsp_enabled", "tsp_enabled"]),
    ],
)
def test_aliases_resolve_per_domain(config, domain, expected):
    assert [config.resolve_fallback(lv, domain) for lv in Level] == expected
    assert validate_cross_references(config, domain) == []


def test_dangling_fallback_is_reported():
    doc = canonical_document().replace('"municipal_safe"', '"no_such_mode"')
    cfg = parse_config(doc)
    problems = validate_cross_references(cfg, "power")
    assert [p.path for p in problems] == ["governance.r2o.levels.L2.fallback"]


def test_actuation_requires_shadow_stage():
    doc = canonical_document().replace('"shadow_mode", ', "")
    cfg = parse_config(doc)
    assert validate_cross_references(cfg, "power") == []
    assert validate_cross_references(cfg, "power", actuated=True)


def test_load_config_env_var(tmp_path, monkeypatch):
    path = tmp_path / "gov.yaml"
    path.write_text(canonical_document().replace("disparity: 1.2", "disparity: 1.4"))
    monkeypatch.setenv(CONFIG_ENV_VAR, str(path))
    assert load_config().thresholds.disparity == 1.4
    assert load_config("default").thresholds.disparity == 1.2
