"""Governance-as-code configuration: parsing, validation, serialization.

The canonical document layout is the ``governance:`` YAML block with
``r2o.thresholds``, ``r2o.levels``, ``r2o.fallbacks``, ``documentation``,
``reviews`` and ``publishing``. Three optional extension keys are understood
on top of that layout:

* ``r2o.thresholds.quality_min`` -- per-service minimum quality index, with an
  optional ``default`` entry (0.9 when absent).
* ``r2o.aliases`` -- per-domain table joining level fallback aliases
  (``safe_local`` etc.) to entries of the domain fallback catalog.
* ``r2o.escalation.persistence_windows`` -- completed L2 windows after which
  a persisting violation escalates to L3.

Always uses ``yaml.safe_load``.
"""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass, field
from datetime import timedelta
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

DOMAINS = ("power", "buildings", "transport")
DEFAULT_QUALITY_FLOOR = 0.9
DEFAULT_PERSISTENCE_WINDOWS = 2
# Pedestrian service quality is the share of waits within 60 s; a median
# above 60 s is the same as that share dropping to one half.
DEFAULT_SERVICE_FLOORS = {"pedestrian_wait_sensitive": 0.5}
CONFIG_ENV_VAR = "R2O_CONFIG"


class ConfigError(ValueError):
    """Base class for configuration problems."""


class ConfigParseError(ConfigError):
    """The document is not well-formed YAML."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class ConfigSchemaError(ConfigError):
    """A required key is missing or a key is not recognized."""

    def __init__(self, message: str, path: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class ConfigValidationError(ConfigError):
    """A value is present but out of range."""

    def __init__(self, message: str, path: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class Level(str, enum.Enum):
    L1 = "L1"
    L2 = "L2"
    L3 = "L3"

    @property
    def rank(self) -> int:
        return int(self.value[1])


AUTHORITIES = {
    Level.L1: "operator_stop",
    Level.L2: "municipal_pause",
    Level.L3: "civic_board_hold",
}

DEFAULT_DURATIONS = {
    Level.L1: timedelta(hours=4),
    Level.L2: timedelta(hours=72),
    Level.L3: timedelta(days=30),
}

DEFAULT_LEVEL_FALLBACKS = {
    Level.L1: "safe_local",
    Level.L2: "municipal_safe",
    Level.L3: "civic_safe",
}

# alias -> position in the domain's ordered fallback catalog
DEFAULT_ALIAS_POSITIONS = {"safe_local": 0, "municipal_safe": 1, "civic_safe": 1}


@dataclass(frozen=True)
class Thresholds:
    disparity: float = 1.2
    hazard_per_hr: float = 1.0e-4
    downtime_minutes: float = 30.0
    quality: Mapping[str, float] = field(default_factory=dict)
    quality_default: float = DEFAULT_QUALITY_FLOOR

    def quality_floor(self, service: str) -> float:
        return self.quality.get(service, self.quality_default)


@dataclass(frozen=True)
class LevelSpec:
    level: Level
    fallback: str
    max_duration: timedelta
    authority: str = ""

    def __post_init__(self) -> None:
        if not self.authority:
            object.__setattr__(self, "authority", AUTHORITIES[self.level])


@dataclass(frozen=True)
class Documentation:
    model_card: bool = True
    datasheet: bool = True


@dataclass(frozen=True)
class Reviews:
    pre_deploy: tuple[str, ...] = ("scenario_walkthrough", "shadow_mode", "civic_tabletop")
    post_incident: tuple[str, ...] = ("blameless_review", "public_report")


@dataclass(frozen=True)
class Publishing:
    notices: str = "open_data_portal"
    metrics: tuple[str, ...] = ("disparity", "risk", "accessibility", "quality_SLA")


@dataclass(frozen=True)
class ConfigViolation:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


@dataclass(frozen=True)
class GovernanceConfig:
    thresholds: Thresholds
    levels: Mapping[Level, LevelSpec]
    fallbacks: Mapping[str, tuple[str, ...]]
    aliases: Mapping[str, Mapping[str, str]]
    documentation: Documentation = Documentation()
    reviews: Reviews = Reviews()
    publishing: Publishing = Publishing()
    persistence_windows: int = DEFAULT_PERSISTENCE_WINDOWS
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def resolve_fallback(self, level: Level, domain: str) -> str:
        """Return the catalog entry that ``level`` applies in ``domain``.

        Raises ``KeyError`` when the level's fallback name does not resolve.
        """
        name = self.levels[level].fallback
        catalog = self.fallbacks.get(domain, ())
        if name in catalog:
            return name
        target = self.aliases.get(domain, {}).get(name)
        if target is None or target not in catalog:
            raise KeyError(f"fallback {name!r} for {level.value} does not resolve in domain {domain!r}")
        return target

    def max_duration(self, level: Level) -> timedelta:
        return self.levels[level].max_duration


# --------------------------------------------------------------------------
# parsing


_TOP_KEYS = {"governance"}
_GOV_KEYS = {"r2o", "documentation", "reviews", "publishing"}
_R2O_KEYS = {"thresholds", "levels", "fallbacks", "aliases", "escalation"}
_THRESHOLD_KEYS = {"disparity", "safety_risk_per_hr", "accessibility_downtime_minutes", "quality_min"}
_LEVEL_KEYS = {"fallback", "max_duration_hours", "max_duration_days", "authority"}


class _Reader:
    """Walks the raw mapping, tracking key paths and unknown keys."""

    def __init__(self, strict: bool):
        self.strict = strict
        self.warnings: list[str] = []

    def mapping(self, value: Any, path: str) -> Mapping[str, Any]:
        if not isinstance(value, Mapping):
            raise ConfigSchemaError(f"expected a mapping, got {type(value).__name__}", path)
        return value

    def check_keys(self, value: Mapping[str, Any], allowed: set[str], path: str) -> None:
        for key in value:
            if key not in allowed:
                key_path = f"{path}.{key}" if path else str(key)
                if self.strict:
                    raise ConfigSchemaError("unrecognized key", key_path)
                self.warnings.append(f"ignored unrecognized key {key_path}")

    def require(self, value: Mapping[str, Any], key: str, path: str) -> Any:
        if key not in value:
            raise ConfigSchemaError("missing required key", f"{path}.{key}" if path else key)
        return value[key]


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigValidationError(f"expected a number, got {value!r}", path)
    out = float(value)
    if not math.isfinite(out):
        raise ConfigValidationError("must be finite", path)
    return out


def _positive(value: Any, path: str) -> float:
    out = _number(value, path)
    if out <= 0:
        raise ConfigValidationError(f"must be > 0, got {out!r}", path)
    return out


def _str_list(value: Any, path: str) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ConfigSchemaError("expected a list of strings", path)
    return tuple(value)


def _flag(value: Any, path: str) -> bool:
    if isinstance(value, bool):
        return value
    if value in ("required", "yes"):
        return True
    if value in ("optional", "no", "none"):
        return False
    raise ConfigValidationError(f"expected 'required', 'optional' or a boolean, got {value!r}", path)


def _parse_thresholds(raw: Any, reader: _Reader, path: str) -> Thresholds:
    raw = reader.mapping(raw, path)
    reader.check_keys(raw, _THRESHOLD_KEYS, path)
    quality: dict[str, float] = dict(DEFAULT_SERVICE_FLOORS)
    quality_default = DEFAULT_QUALITY_FLOOR
    if "quality_min" in raw:
        quality = {}
        qpath = f"{path}.quality_min"
        for service, value in reader.mapping(raw["quality_min"], qpath).items():
            floor = _number(value, f"{qpath}.{service}")
            if not 0 < floor <= 1:
                raise ConfigValidationError(f"must lie in (0, 1], got {floor!r}", f"{qpath}.{service}")
            if service == "default":
                quality_default = floor
            else:
                quality[str(service)] = floor
    return Thresholds(
        disparity=_positive(reader.require(raw, "disparity", path), f"{path}.disparity"),
        hazard_per_hr=_positive(
            reader.require(raw, "safety_risk_per_hr", path), f"{path}.safety_risk_per_hr"
        ),
        downtime_minutes=_positive(
            reader.require(raw, "accessibility_downtime_minutes", path),
            f"{path}.accessibility_downtime_minutes",
        ),
        quality=quality,
        quality_default=quality_default,
    )


def _parse_levels(raw: Any, reader: _Reader, path: str) -> dict[Level, LevelSpec]:
    raw = reader.mapping(raw, path)
    reader.check_keys(raw, {lv.value for lv in Level}, path)
    levels = {}
    for level in Level:
        lpath = f"{path}.{level.value}"
        entry = reader.mapping(reader.require(raw, level.value, path), lpath)
        reader.check_keys(entry, _LEVEL_KEYS, lpath)
        if "max_duration_hours" in entry and "max_duration_days" in entry:
            raise ConfigSchemaError("give max_duration_hours or max_duration_days, not both", lpath)
        if "max_duration_hours" in entry:
            duration = timedelta(hours=_positive(entry["max_duration_hours"], f"{lpath}.max_duration_hours"))
        elif "max_duration_days" in entry:
            duration = timedelta(days=_positive(entry["max_duration_days"], f"{lpath}.max_duration_days"))
        else:
            raise ConfigSchemaError("missing required key", f"{lpath}.max_duration_hours")
        fallback = reader.require(entry, "fallback", lpath)
        if not isinstance(fallback, str) or not fallback:
            raise ConfigSchemaError("expected a fallback identifier", f"{lpath}.fallback")
        authority = entry.get("authority", AUTHORITIES[level])
        if authority not in AUTHORITIES.values():
            raise ConfigValidationError(f"unknown authority {authority!r}", f"{lpath}.authority")
        levels[level] = LevelSpec(level, fallback, duration, authority)
    return levels


def _default_aliases(fallbacks: Mapping[str, tuple[str, ...]]) -> dict[str, dict[str, str]]:
    out = {}
    for domain, catalog in fallbacks.items():
        if catalog:
            out[domain] = {
                alias: catalog[min(pos, len(catalog) - 1)] for alias, pos in DEFAULT_ALIAS_POSITIONS.items()
            }
    return out


def _parse_document(data: Any, reader: _Reader, use_defaults: bool) -> GovernanceConfig:
    defaults = default_config() if use_defaults else None
    top = reader.mapping(data, "<document>")
    reader.check_keys(top, _TOP_KEYS, "")
    gov = reader.mapping(reader.require(top, "governance", ""), "governance")
    reader.check_keys(gov, _GOV_KEYS, "governance")
    r2o = reader.mapping(reader.require(gov, "r2o", "governance"), "governance.r2o")
    reader.check_keys(r2o, _R2O_KEYS, "governance.r2o")

    def section(parent: Mapping[str, Any], key: str, path: str) -> Any:
        if key not in parent and defaults is not None:
            return None
        return reader.require(parent, key, path)

    thresholds = _parse_thresholds(
        reader.require(r2o, "thresholds", "governance.r2o"), reader, "governance.r2o.thresholds"
    )

    raw_levels = section(r2o, "levels", "governance.r2o")
    levels = defaults.levels if raw_levels is None else _parse_levels(raw_levels, reader, "governance.r2o.levels")

    raw_fallbacks = section(r2o, "fallbacks", "governance.r2o")
    if raw_fallbacks is None:
        fallbacks = dict(defaults.fallbacks)
    else:
        fpath = "governance.r2o.fallbacks"
        raw_fallbacks = reader.mapping(raw_fallbacks, fpath)
        reader.check_keys(raw_fallbacks, set(DOMAINS), fpath)
        fallbacks = {d: _str_list(v, f"{fpath}.{d}") for d, v in raw_fallbacks.items()}

    aliases = _default_aliases(fallbacks)
    if "aliases" in r2o:
        apath = "governance.r2o.aliases"
        raw_aliases = reader.mapping(r2o["aliases"], apath)
        reader.check_keys(raw_aliases, set(DOMAINS), apath)
        aliases = {}
        for domain, table in raw_aliases.items():
            table = reader.mapping(table, f"{apath}.{domain}")
            aliases[domain] = {str(k): str(v) for k, v in table.items()}

    persistence = DEFAULT_PERSISTENCE_WINDOWS
    if "escalation" in r2o:
        epath = "governance.r2o.escalation"
        esc = reader.mapping(r2o["escalation"], epath)
        reader.check_keys(esc, {"persistence_windows"}, epath)
        if "persistence_windows" in esc:
            value = esc["persistence_windows"]
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigValidationError("must be an integer >= 1", f"{epath}.persistence_windows")
            persistence = value

    raw_doc = section(gov, "documentation", "governance")
    if raw_doc is None:
        documentation = defaults.documentation
    else:
        dpath = "governance.documentation"
        raw_doc = reader.mapping(raw_doc, dpath)
        reader.check_keys(raw_doc, {"model_card", "datasheet"}, dpath)
        documentation = Documentation(
            model_card=_flag(reader.require(raw_doc, "model_card", dpath), f"{dpath}.model_card"),
            datasheet=_flag(reader.require(raw_doc, "datasheet", dpath), f"{dpath}.datasheet"),
        )

    raw_rev = section(gov, "reviews", "governance")
    if raw_rev is None:
        reviews = defaults.reviews
    else:
        rpath = "governance.reviews"
        raw_rev = reader.mapping(raw_rev, rpath)
        reader.check_keys(raw_rev, {"pre_deploy", "post_incident"}, rpath)
        reviews = Reviews(
            pre_deploy=_str_list(reader.require(raw_rev, "pre_deploy", rpath), f"{rpath}.pre_deploy"),
            post_incident=_str_list(reader.require(raw_rev, "post_incident", rpath), f"{rpath}.post_incident"),
        )

    raw_pub = section(gov, "publishing", "governance")
    if raw_pub is None:
        publishing = defaults.publishing
    else:
        ppath = "governance.publishing"
        raw_pub = reader.mapping(raw_pub, ppath)
        reader.check_keys(raw_pub, {"notices", "metrics"}, ppath)
        notices = reader.require(raw_pub, "notices", ppath)
        if not isinstance(notices, str):
            raise ConfigSchemaError("expected a channel identifier", f"{ppath}.notices")
        publishing = Publishing(
            notices=notices, metrics=_str_list(reader.require(raw_pub, "metrics", ppath), f"{ppath}.metrics")
        )

    return GovernanceConfig(
        thresholds=thresholds,
        levels=levels,
        fallbacks=fallbacks,
        aliases=aliases,
        documentation=documentation,
        reviews=reviews,
        publishing=publishing,
        persistence_windows=persistence,
        warnings=tuple(reader.warnings),
    )


def parse_config(document: str, *, strict: bool = True, use_defaults: bool = False) -> GovernanceConfig:
    """Parse a governance document.

    With ``strict`` (the default) unrecognized keys raise
    :class:`ConfigSchemaError`; otherwise they are collected into
    ``config.warnings``. With ``use_defaults`` any missing section other than
    the thresholds block is taken from :func:`default_config`.
    """
    try:
        data = yaml.safe_load(document)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark is not None else None
        column = mark.column + 1 if mark is not None else None
        raise ConfigParseError(f"malformed document: {exc.problem or exc}", line, column) from exc
    except yaml.YAMLError as exc:
        raise ConfigParseError(f"malformed document: {exc}") from exc
    if data is None:
        raise ConfigSchemaError("missing required key", "governance")
    return _parse_document(data, _Reader(strict), use_defaults)


def canonical_document() -> str:
    """The reference governance document shipped with the package."""
    return resources.files("r2o.data").joinpath("governance.yaml").read_text(encoding="utf-8")


_DEFAULT: GovernanceConfig | None = None


def default_config() -> GovernanceConfig:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = parse_config(canonical_document())
    return _DEFAULT


def load_config(path: str | os.PathLike[str] | None = None, *, strict: bool = True) -> GovernanceConfig:
    """Load from ``path``, else ``$R2O_CONFIG``, else the default config.

    The literal path ``default`` also selects the default config.
    """
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if path is None or str(path) == "default":
        return default_config()
    return parse_config(Path(path).read_text(encoding="utf-8"), strict=strict)


def _duration_entry(duration: timedelta) -> dict[str, float | int]:
    hours = duration.total_seconds() / 3600.0
    if hours >= 24 * 7 and hours % 24 == 0:
        return {"max_duration_days": int(hours // 24)}
    return {"max_duration_hours": int(hours) if hours.is_integer() else hours}


def config_to_dict(config: GovernanceConfig) -> dict[str, Any]:
    th = config.thresholds
    quality = {"default": th.quality_default, **dict(sorted(th.quality.items()))}
    return {
        "governance": {
            "r2o": {
                "thresholds": {
                    "disparity": th.disparity,
                    "safety_risk_per_hr": th.hazard_per_hr,
                    "accessibility_downtime_minutes": th.downtime_minutes,
                    "quality_min": quality,
                },
                "levels": {
                    lv.value: {
                        "fallback": spec.fallback,
                        **_duration_entry(spec.max_duration),
                        "authority": spec.authority,
                    }
                    for lv, spec in sorted(config.levels.items(), key=lambda kv: kv[0].rank)
                },
                "fallbacks": {d: list(c) for d, c in config.fallbacks.items()},
                "aliases": {d: dict(t) for d, t in config.aliases.items()},
                "escalation": {"persistence_windows": config.persistence_windows},
            },
            "documentation": {
                "model_card": "required" if config.documentation.model_card else "optional",
                "datasheet": "required" if config.documentation.datasheet else "optional",
            },
            "reviews": {
                "pre_deploy": list(config.reviews.pre_deploy),
                "post_incident": list(config.reviews.post_incident),
            },
            "publishing": {
                "notices": config.publishing.notices,
                "metrics": list(config.publishing.metrics),
            },
        }
    }


def serialize_config(config: GovernanceConfig) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=False, default_flow_style=False)


def validate_cross_references(
    config: GovernanceConfig, domain: str, *, actuated: bool = False
) -> list[ConfigViolation]:
    """List the problems that would stop ``config`` from governing ``domain``.

    Returns an empty list when every level's fallback resolves in the domain
    catalog and every threshold is in range. With ``actuated`` the
    pre-deployment stages must also include ``shadow_mode``.
    """
    out: list[ConfigViolation] = []
    th = config.thresholds
    base = "governance.r2o.thresholds"
    for name, value in (
        ("disparity", th.disparity),
        ("safety_risk_per_hr", th.hazard_per_hr),
        ("accessibility_downtime_minutes", th.downtime_minutes),
    ):
        if not (math.isfinite(value) and value > 0):
            out.append(ConfigViolation(f"{base}.{name}", f"must be > 0, got {value!r}"))
    for service, floor in [("default", th.quality_default), *sorted(th.quality.items())]:
        if not 0 < floor <= 1:
            out.append(ConfigViolation(f"{base}.quality_min.{service}", f"must lie in (0, 1], got {floor!r}"))

    if domain not in config.fallbacks or not config.fallbacks[domain]:
        out.append(ConfigViolation(f"governance.r2o.fallbacks.{domain}", "no fallback catalog for domain"))
    for level in Level:
        spec = config.levels.get(level)
        if spec is None:
            out.append(ConfigViolation(f"governance.r2o.levels.{level.value}", "level not defined"))
            continue
        try:
            config.resolve_fallback(level, domain)
        except KeyError:
            out.append(
                ConfigViolation(
                    f"governance.r2o.levels.{level.value}.fallback",
                    f"dangling fallback identifier {spec.fallback!r} for domain {domain!r}",
                )
            )
    durations = [config.levels[lv].max_duration for lv in Level if lv in config.levels]
    if any(b <= a for a, b in zip(durations, durations[1:])):
        out.append(ConfigViolation("governance.r2o.levels", "max durations must strictly increase with level"))
    if actuated and "shadow_mode" not in config.reviews.pre_deploy:
        out.append(ConfigViolation("governance.reviews.pre_deploy", "actuated runs require a shadow_mode stage"))
    return out
