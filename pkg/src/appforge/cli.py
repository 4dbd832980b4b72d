"""Command-line entry point. Exit codes: 0 Done, 2 Escalated, 1 error."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from appforge.backends import FaultInjectingBackend, RemoteBackend, ScriptedBackend, generate_schedule
from appforge.errors import AppForgeError
from appforge.kb import KnowledgeBase
from appforge.model import Budgets, CodePlan, Directive, StubBody
from appforge.orchestrator import Orchestrator, RunOutcome, load_run_state, record_resolution
from appforge.scenario import result_json, run_scenario, sweep, write_table
from appforge.toolchain import CommandToolchain, StubToolchain, ToolchainConfig
from appforge.workspace import Workspace

EXIT_DONE, EXIT_ERROR, EXIT_ESCALATED = 0, 1, 2
RUN_CONFIG = "inputs/run-config.json"

# flag dest -> environment variable
ENV = {
    "workspace": "APPFORGE_WORKSPACE",
    "backend": "APPFORGE_BACKEND",
    "fixtures": "APPFORGE_FIXTURES",
    "toolchain": "APPFORGE_TOOLCHAIN",
    "budgets": "APPFORGE_BUDGETS",
    "knowledge": "APPFORGE_KNOWLEDGE",
    "seed": "APPFORGE_SEED",
    "strict": "APPFORGE_STRICT",
    "fault_rate": "APPFORGE_FAULT_RATE",
    "remote_url": "APPFORGE_REMOTE_URL",
    "remote_timeout": "APPFORGE_REMOTE_TIMEOUT",
    "remote_retries": "APPFORGE_REMOTE_RETRIES",
}
RUN_KEYS = ("backend", "fixtures", "toolchain", "budgets", "knowledge", "seed", "strict", "fault_rate",
            "remote_url", "remote_timeout", "remote_retries")


class UsageError(Exception):
    pass


def _env_default(dest: str, default: Any = None) -> Any:
    value = os.environ.get(ENV[dest])
    if value is None:
        return default
    if dest == "strict":
        return value.strip().lower() in ("1", "true", "yes", "on")
    return value


def _add_workspace(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workspace", default=_env_default("workspace", "."), help="workspace root")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=("scripted", "remote"), default=_env_default("backend"))
    p.add_argument("--fixtures", default=_env_default("fixtures"),
                   help="fixture directory for the scripted backend (comma-separated for several)")
    p.add_argument("--toolchain", default=_env_default("toolchain"), help="stub or command:CONFIG.json")
    p.add_argument("--budgets", default=_env_default("budgets"), help="D,P,R (default 3,2,3)")
    p.add_argument("--knowledge", default=_env_default("knowledge"), help="knowledge pack directory")
    p.add_argument("--seed", type=int, default=_env_default("seed"), help="seed for injected faults")
    p.add_argument("--fault-rate", dest="fault_rate", type=float, default=_env_default("fault_rate"),
                   help="probability of injecting a transient compile fault per module")
    p.add_argument("--strict", action="store_true", default=_env_default("strict", False),
                   help="fail when a functional requirement maps to no contract")
    p.add_argument("--remote-url", dest="remote_url", default=_env_default("remote_url"))
    p.add_argument("--remote-timeout", dest="remote_timeout", type=float, default=_env_default("remote_timeout"))
    p.add_argument("--remote-retries", dest="remote_retries", type=int, default=_env_default("remote_retries"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="appforge", description="Multi-agent code generation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create a workspace from an SRS and an ADD")
    _add_workspace(p)
    p.add_argument("--srs", required=True)
    p.add_argument("--add", required=True)
    p.add_argument("--force", action="store_true", help="archive an existing workspace first")

    p = sub.add_parser("run", help="execute the pipeline")
    _add_workspace(p)
    _add_run_flags(p)

    p = sub.add_parser("resume", help="apply audit resolutions and continue")
    _add_workspace(p)
    _add_run_flags(p)
    p.add_argument("--run-id", dest="run_id")
    p.add_argument("--item")
    _add_directive_flags(p, required=False)

    for name, text in (("status", "print the last pipeline state"),
                       ("trace", "print the traceability matrix"),
                       ("report", "print the latest test report summary")):
        p = sub.add_parser(name, help=text)
        _add_workspace(p)

    audit = sub.add_parser("audit", help="inspect and resolve audit items")
    audit_sub = audit.add_subparsers(dest="audit_command", required=True)
    p = audit_sub.add_parser("list")
    _add_workspace(p)
    p = audit_sub.add_parser("show")
    _add_workspace(p)
    p.add_argument("item")
    p = audit_sub.add_parser("resolve")
    _add_workspace(p)
    p.add_argument("item")
    _add_directive_flags(p, required=True)

    scen = sub.add_parser("scenario", help="scenario harness")
    scen_sub = scen.add_subparsers(dest="scenario_command", required=True)
    p = scen_sub.add_parser("run")
    p.add_argument("path")
    p.add_argument("--budgets", default=_env_default("budgets"))
    p.add_argument("--workspace", default=None, help="keep the run in this directory")
    p.add_argument("--json", action="store_true")
    p = scen_sub.add_parser("sweep")
    p.add_argument("path")
    p.add_argument("--D", default="", help="comma-separated self-debug budgets")
    p.add_argument("--P", default="", help="comma-separated plan-revision budgets")
    p.add_argument("--R", default="", help="comma-separated rectification budgets")
    p.add_argument("--fault-rates", dest="fault_rates", default="")
    p.add_argument("--seed", type=int, default=int(_env_default("seed", 0)))
    p.add_argument("--transient", action="store_true", help="faults hit only the first attempt")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="TSV output path (default: stdout)")
    return parser


def _add_directive_flags(p: argparse.ArgumentParser, required: bool) -> None:
    group = p.add_mutually_exclusive_group(required=required)
    group.add_argument("--action", choices=("skip", "abort"))
    group.add_argument("--directive", help="directive JSON file")
    group.add_argument("--plan", help="amended code plan JSON file")
    group.add_argument("--unit-body", dest="unit_body", help="amended unit body JSON file")
    p.add_argument("--note", default="")


def _read_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None


def directive_from(args: argparse.Namespace) -> Optional[Directive]:
    if args.action:
        return Directive(action=args.action, note=args.note)
    if args.directive:
        return Directive.parse(_read_json(args.directive))
    if args.plan:
        return Directive(action="amend", plan=CodePlan.parse(_read_json(args.plan)), note=args.note)
    if args.unit_body:
        return Directive(action="amend", unit_body=StubBody.parse(_read_json(args.unit_body)), note=args.note)
    return None


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


# -- wiring ------------------------------------------------------------------


def run_config(ws: Workspace, args: argparse.Namespace) -> dict[str, Any]:
    """Flags override the stored configuration; the merge is stored for later resumes."""
    stored = ws.read_json(RUN_CONFIG) if ws.exists(RUN_CONFIG) else {}
    config = {k: stored.get(k) for k in RUN_KEYS}
    for key in RUN_KEYS:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            config[key] = value
    ws.write_json(RUN_CONFIG, config)
    return config


def make_orchestrator(ws: Workspace, config: dict[str, Any]) -> Orchestrator:
    backend_kind = config.get("backend") or "scripted"
    if backend_kind == "remote":
        if not config.get("remote_url"):
            raise UsageError("--remote-url is required with --backend remote")
        backend = RemoteBackend(config["remote_url"], float(config.get("remote_timeout") or 30.0),
                                int(config.get("remote_retries") if config.get("remote_retries") is not None else 2))
    else:
        if not config.get("fixtures"):
            raise UsageError("--fixtures is required with the scripted backend")
        backend = ScriptedBackend.from_dir([Path(p) for p in str(config["fixtures"]).split(",")])
    rate = float(config.get("fault_rate") or 0.0)
    if rate:
        modules = [e.module_id for e in ws.add().elements]
        backend = FaultInjectingBackend(backend, generate_schedule(modules, rate, int(config.get("seed") or 0)))
    toolchain_spec = config.get("toolchain") or "stub"
    if toolchain_spec == "stub":
        toolchain = StubToolchain()
    elif toolchain_spec.startswith("command:"):
        toolchain = CommandToolchain(ToolchainConfig.from_file(toolchain_spec[len("command:"):]), ws.root)
    else:
        raise UsageError(f"--toolchain must be 'stub' or 'command:CONFIG', got {toolchain_spec!r}")
    kb = KnowledgeBase.load_pack(config["knowledge"]) if config.get("knowledge") else None
    budgets = Budgets.from_triple(config["budgets"]) if config.get("budgets") else Budgets()
    return Orchestrator(ws, backend, toolchain, kb, budgets, bool(config.get("strict")))


def summarize(outcome: RunOutcome) -> str:
    lines = [f"{outcome.status}: run {outcome.run_id}, plan v{outcome.plan_version}"]
    if outcome.report is not None:
        r = outcome.report
        passed = sum(1 for v in r.case_results.values() if v == "passed")
        lines.append(f"  tests {passed}/{len(r.case_results)} passed, {len(r.defects)} defects, "
                     f"coverage {r.coverage:.2f}")
    if outcome.status == "Escalated":
        lines.append(f"  reason: {outcome.reason}")
        for item in outcome.audit_items:
            lines.append(f"  {item.id} [{item.status}] {item.subject}: {item.reason}")
    return "\n".join(lines)


def _exit(outcome: RunOutcome) -> int:
    return EXIT_DONE if outcome.status == "Done" else EXIT_ESCALATED


# -- commands ----------------------------------------------------------------


def cmd_init(args) -> int:
    ws = Workspace.init(args.workspace, Path(args.srs), Path(args.add), force=args.force)
    print(f"initialized workspace {ws.root}")
    return EXIT_DONE


def cmd_run(args) -> int:
    ws = Workspace.open(args.workspace)
    outcome = make_orchestrator(ws, run_config(ws, args)).run()
    print(summarize(outcome))
    return _exit(outcome)


def cmd_resume(args) -> int:
    ws = Workspace.open(args.workspace)
    orchestrator = make_orchestrator(ws, run_config(ws, args))
    outcome = orchestrator.resume(args.run_id, directive_from(args), args.item)
    print(summarize(outcome))
    return _exit(outcome)


def cmd_status(args) -> int:
    ws = Workspace.open(args.workspace)
    rs = load_run_state(ws)
    print(f"{rs.run_id}: {rs.state.label}")
    print("  " + ", ".join(f"{k}={v}" for k, v in sorted(rs.state.counters.items())))
    return EXIT_DONE


def cmd_trace(args) -> int:
    ws = Workspace.open(args.workspace)
    matrix = ws.load("trace-matrix")
    results = ws.load("report").case_results if ws.ordinals("report") else {}
    for row in matrix.rows:
        passed = sum(1 for c in row.test_case_ids if results.get(c) == "passed")
        print(f"{row.requirement_id} -> {row.module_id}.{row.method_signature} -> "
              f"{len(row.test_case_ids)} cases ({passed} passed)")
        for case_id in row.test_case_ids:
            print(f"    {results.get(case_id, 'pending'):7} {case_id}")
    return EXIT_DONE


def cmd_report(args) -> int:
    ws = Workspace.open(args.workspace)
    report = ws.load("report")
    passed = sum(1 for v in report.case_results.values() if v == "passed")
    accepted = set(load_run_state(ws).accepted_defects) if ws.exists("artifacts/run-state.json") else set()
    print(f"report {report.ordinal}: {passed}/{len(report.case_results)} passed, coverage {report.coverage:.2f}")
    for d in report.defects:
        mark = " (accepted)" if d.id in accepted else ""
        print(f"  [{d.severity}] {d.id}{mark}: {d.description}")
    return EXIT_DONE


def cmd_audit(args) -> int:
    ws = Workspace.open(args.workspace)
    queue = ws.audit_queue()
    if args.audit_command == "list":
        for item in queue.items:
            print(f"{item.id} [{item.status}] {item.subject}: {item.reason}")
        return EXIT_DONE
    item = next((i for i in queue.items if i.id == args.item), None)
    if item is None:
        raise UsageError(f"no audit item {args.item}")
    if args.audit_command == "show":
        print(item.dumps(), end="")
        return EXIT_DONE
    with ws.lock():
        ws.save_audit_queue(record_resolution(queue, directive_from(args), args.item))
    print(f"{args.item} resolved")
    return EXIT_DONE


def cmd_scenario(args) -> int:
    if args.scenario_command == "run":
        budgets = Budgets.from_triple(args.budgets) if args.budgets else None
        result = run_scenario(args.path, budgets, args.workspace)
        if args.json:
            print(result_json(result))
        else:
            print(f"{result.name}: {'pass' if result.passed else 'FAIL'} ({result.metrics['outcome']})")
            for m in result.mismatches:
                print("  " + m)
        return EXIT_DONE if result.passed else EXIT_ERROR
    grid = {"D": _ints(args.D), "P": _ints(args.P), "R": _ints(args.R),
            "fault_rate": [float(x) for x in args.fault_rates.split(",") if x.strip()]}
    rows = sweep(args.path, grid, args.seed, persistent=not args.transient, out=args.out, workers=args.workers)
    if args.out is None:
        write_table(rows, sys.stdout)
    return EXIT_DONE


COMMANDS = {
    "init": cmd_init, "run": cmd_run, "resume": cmd_resume, "status": cmd_status, "trace": cmd_trace,
    "report": cmd_report, "audit": cmd_audit, "scenario": cmd_scenario,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (AppForgeError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
