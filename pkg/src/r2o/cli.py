"""Command-line entry point.

    r2o run-case power --out runs/power
    r2o shadow traffic
    r2o sweep power --param tau_D --values 1.0,1.2,1.5,2.0
    r2o validate-config --config governance.yaml
    r2o gate path/to/workspace
    r2o report --audit runs/power/power_audit.jsonl --out workspace

Exit status: 0 on success, 1 for bad input (config, scenario, paths, a
failing review gate), 2 when a run breaks one of its own invariants.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .artifacts import (
    ArtifactError,
    generate_incident_report,
    make_fixture_workspace,
    reportable_ids,
    run_review_gate,
    sensitivity_sweep,
    validate_incident_report,
    write_incident_reports,
    write_notices,
)
from .audit import read_jsonl, write_atomic
from .config import CONFIG_ENV_VAR, ConfigError, GovernanceConfig, load_config, validate_cross_references
from .gating import GatingConfigError, InvariantError, SimulationReport
from .monitors import monitors_to_csv

logger = logging.getLogger("r2o")

CASES = {"power": "power", "building": "buildings", "buildings": "buildings", "traffic": "transport", "transport": "transport"}


class UsageError(ValueError):
    pass


# --------------------------------------------------------------------------
# formatting


def format_table(rows: Sequence[dict], fmt: str = "table") -> str:
    if not rows:
        return ""
    headers = list(rows[0])
    cells = [["" if r.get(h) is None else str(r.get(h)) for h in headers] for r in rows]
    if fmt == "delimited":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(headers)
        writer.writerows(cells)
        return buf.getvalue()
    widths = [max(len(h), *(len(c[k]) for c in cells)) for k, h in enumerate(headers)]

    def line(values: Sequence[str]) -> str:
        return "  ".join(v.ljust(w) if k == 0 else v.rjust(w) for k, (v, w) in enumerate(zip(values, widths))).rstrip()

    out = [line(headers), line(["-" * w for w in widths])]
    out += [line(c) for c in cells]
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# case plumbing


def _case_module(domain: str):
    from .sim import building, power, traffic

    return {"power": power, "buildings": building, "transport": traffic}[domain]


def _domain(case: str) -> str:
    try:
        return CASES[case]
    except KeyError:
        raise UsageError(f"unknown case {case!r}; expected power, building or traffic") from None


def load_scenario(domain: str, path: str | None, seed: int | None):
    from .sim import building, power, traffic

    if path is None:
        fixtures = {"power": power.case1_fixture, "buildings": building.cold_day_fixture, "transport": traffic.default_fixture}
        return fixtures[domain](seed or 0)
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc})") from exc
    declared = data.get("case")
    if declared is not None and CASES.get(declared) != domain:
        raise UsageError(f"{path} describes a {declared!r} scenario, not {domain!r}")
    try:
        scenario = _case_module(domain).scenario_from_dict(data)
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{path}: malformed scenario ({exc!r})") from exc
    if seed is not None:
        scenario = replace(scenario, seed=seed)
    return scenario


def run_case(domain: str, scenario: Any, config: GovernanceConfig, mode: str):
    """Run one case; returns (tables, simulation report)."""
    mod = _case_module(domain)
    if domain == "power":
        result = mod.run_power_case(scenario, config, mode)
        return {"table1_load_shedding": result.table()}, result.run
    if domain == "buildings":
        result = mod.run_building_case(scenario, config, mode)
        return {"table2_comfort_energy": result.table()}, result.run
    result = mod.run_traffic_case(scenario, config, mode)
    tables = {"table3_traffic": result.table(), "table4_headway": result.headway_table()}
    return tables, result.gated.run


def emit_run(
    domain: str,
    tables: dict[str, list[dict]],
    run: SimulationReport,
    out: Path | None,
    fmt: str,
) -> str:
    text = []
    for name, rows in tables.items():
        text.append(f"# {name}\n{format_table(rows, fmt)}")
    text.append(f"# overrides: {run.override_count}  fallback steps: {run.fallback_steps}  would-be triggers: {run.would_be_triggers}\n")
    rendered = "\n".join(text)
    if out is not None:
        ext = "csv" if fmt == "delimited" else "txt"
        stem = {"power": "power", "buildings": "building", "transport": "traffic"}[domain]
        for name, rows in tables.items():
            write_atomic(out / f"{name}.{ext}", format_table(rows, fmt))
        write_atomic(out / f"{stem}_report.json", run.to_json())
        write_atomic(out / f"{stem}_audit.jsonl", run.audit_jsonl())
        write_atomic(out / f"{stem}_monitors.csv", monitors_to_csv(run.monitors))
        write_notices(out, run.notices)
    return rendered


# --------------------------------------------------------------------------
# subcommands


def _config(args: argparse.Namespace) -> GovernanceConfig:
    return load_config(args.config)


def cmd_run(args: argparse.Namespace, mode: str | None = None) -> int:
    domain = _domain(args.case)
    config = _config(args)
    mode = mode or args.mode
    scenario = load_scenario(domain, args.scenario, args.seed)
    tables, run = run_case(domain, scenario, config, mode)
    problems = run.contract_errors(config)
    if problems:
        raise InvariantError("; ".join(problems))
    out = Path(args.out) if args.out else None
    sys.stdout.write(emit_run(domain, tables, run, out, args.format))
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    domain = _domain(args.case)
    config = _config(args)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"--values must be comma-separated numbers ({exc})") from exc
    scenario = load_scenario(domain, args.scenario, args.seed) if args.scenario else None
    case = {"power": "power", "buildings": "building", "transport": "traffic"}[domain]
    rows = sensitivity_sweep(case, args.param, values, config, scenario, args.seed or 0)
    text = format_table(rows, args.format)
    if args.out:
        ext = "csv" if args.format == "delimited" else "txt"
        write_atomic(Path(args.out) / f"sweep_{case}_{args.param}.{ext}", text)
    sys.stdout.write(text)
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    config = _config(args)
    problems = [p for d in ("power", "buildings", "transport") for p in validate_cross_references(config, d)]
    for p in problems:
        print(f"error: {p}", file=sys.stderr)
    for w in config.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if problems:
        return 1
    th = config.thresholds
    print(f"ok: tau_D={th.disparity:g} tau_R={th.hazard_per_hr:g} tau_A={th.downtime_minutes:g}")
    return 0


def cmd_gate(args: argparse.Namespace) -> int:
    config = _config(args)
    if args.init:
        make_fixture_workspace(args.workspace, config)
    result = run_review_gate(args.workspace, config)
    for c in result.checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"{status}  {c.name}" + (f"  ({c.detail})" if c.detail else ""))
    return 0 if result.passed else 1


def cmd_report(args: argparse.Namespace) -> int:
    config = _config(args)
    records = read_jsonl(args.audit)
    run = None
    if args.run:
        data = json.loads(Path(args.run).read_text(encoding="utf-8"))
        run = SimulationReport(
            scenario_id=data["scenario_id"],
            domain=data["domain"],
            mode=data["mode"],
            policy_id=data["policy_id"],
            policy_version=data["policy_version"],
            metrics=data.get("metrics", {}),
            notices=[{"audit_id": a, "notice_id": n} for a, n in data.get("notices", {}).items()],
        )
    reports = []
    closed = set(reportable_ids(records))
    for rec in records:
        if rec.event == "override_started" and rec.audit_id not in closed:
            print(f"skipped: override {rec.audit_id} is still open", file=sys.stderr)
    for audit_id in sorted(closed):
        report = generate_incident_report(audit_id, records, run, config)
        problems = validate_incident_report(report, records)
        if problems:
            raise InvariantError(f"report {audit_id}: {'; '.join(problems)}")
        reports.append(report)
    paths = write_incident_reports(args.out, reports)
    for report, path in zip(reports, paths):
        flag = "" if report.valid else "  VIOLATION: " + "; ".join(report.invariant_violations)
        print(f"{path}{flag}")
    return 0


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="r2o", description="Right-to-override gating simulations and audit artifacts.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"governance YAML (default: ${CONFIG_ENV_VAR} or the built-in document)")

    output = argparse.ArgumentParser(add_help=False)
    output.add_argument("--out", help="directory for output files")
    output.add_argument("--format", choices=("table", "delimited"), default="table")

    case = argparse.ArgumentParser(add_help=False)
    case.add_argument("case", help="power, building or traffic")
    case.add_argument("--scenario", help="scenario JSON file (default: the built-in fixture)")
    case.add_argument("--seed", type=int, default=None)

    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run-case", parents=[common, output, case], help="run a case with and without the gate")
    p.add_argument("--mode", choices=("actuated", "shadow"), default="actuated")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("shadow", parents=[common, output, case], help="run a case in shadow mode")
    p.set_defaults(func=lambda a: cmd_run(a, mode="shadow"))

    p = sub.add_parser("sweep", parents=[common, output, case], help="threshold sensitivity sweep")
    p.add_argument("--param", choices=("tau_D", "tau_A"), required=True)
    p.add_argument("--values", required=True, help="comma-separated threshold values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate-config", parents=[common], help="parse and cross-check a governance config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gate", parents=[common], help="run the documentation and review gate on a workspace")
    p.add_argument("workspace")
    p.add_argument("--init", action="store_true", help="first write a complete fixture workspace")
    p.set_defaults(func=cmd_gate)

    p = sub.add_parser("report", parents=[common], help="write incident reports for closed overrides")
    p.add_argument("--audit", required=True, help="audit log (JSON lines)")
    p.add_argument("--run", help="run report JSON, for metrics and notice ids")
    p.add_argument("--out", required=True, help="workspace root; reports go to reports/incidents/")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvariantError as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, GatingConfigError, UsageError, ArtifactError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
