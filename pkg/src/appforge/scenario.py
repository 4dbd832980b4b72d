"""Scenario harness: replay a bundled scenario, check expectations, emit loop metrics."""

from __future__ import annotations

import ast
import csv
import itertools
import json
import operator
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Literal, Optional, Union

from pydantic import field_validator

from appforge.backends import FaultInjectingBackend, FaultSpec, ScriptedBackend, generate_schedule
from appforge.errors import FixtureGapError, SchemaError, ScenarioSchemaError
from appforge.kb import KnowledgeBase
from appforge.model import AddDocument, Artifact, Budgets
from appforge.orchestrator import Orchestrator, RunOutcome, load_run_state
from appforge.toolchain import StubToolchain
from appforge.workspace import Workspace

ORIGINS = ("compiler", "launch_check", "test_report", "quality_check")
REPAIR_STATES = ("SelfDebugging", "Revising", "Rectifying")


class Expectations(Artifact):
    """Structural expectations; integers may be given as formulas over D, P and R."""

    outcome: Literal["Done", "Escalated"]
    plan_version: Optional[Union[int, str]] = None
    revisions: Optional[Union[int, str]] = None
    rectification_rounds: Optional[Union[int, str]] = None
    improvement_records: Optional[Union[int, str]] = None
    defects_repaired: Optional[Union[int, str]] = None
    final_defects: Optional[Union[int, str]] = None
    coverage: Optional[float] = None
    audit_items: Optional[Union[int, str]] = None
    compile_attempts: dict[str, Union[int, str]] = {}
    feedback: dict[str, Union[int, str]] = {}


class Scenario(Artifact):
    name: str
    description: str = ""
    srs: str
    add: str
    knowledge_pack: Optional[str] = None
    fixtures: tuple[str, ...]
    fault_schedule: tuple[FaultSpec, ...] = ()
    budgets: Budgets = Budgets()
    expectations: Expectations

    @field_validator("fixtures", mode="before")
    @classmethod
    def _one_or_many(cls, value: Any) -> Any:
        return (value,) if isinstance(value, str) else value


@dataclass
class LoadedScenario:
    scenario: Scenario
    base: Path

    def resolve(self, rel: str) -> Path:
        return (self.base / rel).resolve()


def load_scenario(path: Union[str, Path]) -> LoadedScenario:
    path = Path(path)
    if path.is_dir():
        path = path / "scenario.json"
    try:
        scenario = Scenario.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ScenarioSchemaError(f"no scenario file at {path}") from None
    except SchemaError as exc:
        raise ScenarioSchemaError(f"{path}: {exc}") from exc
    loaded = LoadedScenario(scenario, path.parent)
    for rel in (scenario.srs, scenario.add, *scenario.fixtures):
        if not loaded.resolve(rel).exists():
            raise ScenarioSchemaError(f"{path}: referenced path {rel} does not exist")
    return loaded


# -- expectation formulas ----------------------------------------------------

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.FloorDiv: operator.floordiv}


def evaluate_formula(expr: Union[int, str], budgets: Budgets) -> int:
    """Integer arithmetic over ``D``, ``P`` and ``R``; nothing else is allowed."""
    if isinstance(expr, int):
        return expr
    names = {"D": budgets.self_debug, "P": budgets.plan_revision, "R": budgets.rectification}

    def ev(node: ast.AST) -> int:
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, int):
            return node.value
        if isinstance(node, ast.Name) and node.id in names:
            return names[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        raise ScenarioSchemaError(f"unsupported expression in formula {expr!r}")

    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ScenarioSchemaError(f"bad formula {expr!r}") from exc
    return ev(tree)


# -- running -----------------------------------------------------------------


@dataclass
class ScenarioResult:
    name: str
    passed: bool
    mismatches: list[str]
    metrics: dict[str, Any]
    outcome: RunOutcome
    budgets: Budgets = field(default_factory=Budgets)


def collect_metrics(workspace: Workspace, outcome: RunOutcome) -> dict[str, Any]:
    rs = load_run_state(workspace)
    trace = workspace.read_json("artifacts/state-trace.json")
    feedback = {o: rs.feedback.get(o, 0) for o in ORIGINS}
    sources: set[str] = set()
    for n in workspace.ordinals("feedback"):
        event = workspace.load("feedback", n)
        if event.origin == "test_report":
            report = workspace.load("report", int(event.payload_ref.rsplit("-", 1)[1].split(".")[0]))
            sig = next(d.trace.method_signature for d in report.defects if d.id == event.subject)
            sources.add("method:" + sig)
        else:
            sources.add("unit:" + event.subject)
    unresolved = set()
    for item in outcome.audit_items:
        unresolved.add("unit:" + item.subject)
        if item.subject.startswith("DEF::"):
            unresolved.add("method:" + item.subject.split("::")[2])
    total = rs.reused + rs.regenerated
    report = outcome.report
    return {
        "outcome": outcome.status,
        "plan_version": rs.plan_version,
        "revisions": rs.revisions,
        "rectification_rounds": rs.rectification_rounds,
        "iterations": sum(1 for s in trace if s["state"] in REPAIR_STATES),
        "feedback": feedback,
        "reuse_ratio": rs.reused / total if rs.revisions and total else 1.0,
        "compile_attempts": dict(sorted(rs.compile_attempts.items())),
        "improvement_records": len(workspace.improvements()),
        "defects_repaired": len(sources - unresolved),
        "final_defects": len(report.defects) - len(rs.accepted_defects) if report else None,
        "coverage": report.coverage if report else None,
        "audit_items": len(outcome.audit_items),
    }


def check(expect: Expectations, metrics: dict[str, Any], budgets: Budgets) -> list[str]:
    mismatches = []
    for key in ("outcome", "plan_version", "revisions", "rectification_rounds", "improvement_records",
                "defects_repaired", "final_defects", "coverage", "audit_items"):
        want = getattr(expect, key)
        if isinstance(want, str) and key != "outcome":
            want = evaluate_formula(want, budgets)
        if want is not None and metrics[key] != want:
            mismatches.append(f"{key}: expected {want}, got {metrics[key]}")
    for module, formula in sorted(expect.compile_attempts.items()):
        want = evaluate_formula(formula, budgets)
        got = metrics["compile_attempts"].get(module, 0)
        if got != want:
            mismatches.append(f"compile_attempts[{module}]: expected {want}, got {got}")
    for origin, formula in sorted(expect.feedback.items()):
        want = evaluate_formula(formula, budgets)
        got = metrics["feedback"].get(origin, 0)
        if got != want:
            mismatches.append(f"feedback[{origin}]: expected {want}, got {got}")
    return mismatches


def _raise_gap(outcome: RunOutcome) -> None:
    for item in outcome.audit_items:
        gap = item.evidence.get("missing_fixture")
        if gap:
            raise FixtureGapError(*gap)


def execute(
    loaded: LoadedScenario,
    root: Union[str, Path],
    budgets: Optional[Budgets] = None,
    fault_schedule: Optional[list[FaultSpec]] = None,
) -> tuple[Workspace, RunOutcome]:
    """Initialize ``root`` from the scenario inputs and run the pipeline once."""
    sc = loaded.scenario
    ws = Workspace.init(root, loaded.resolve(sc.srs), loaded.resolve(sc.add))
    kb = KnowledgeBase.load_pack(loaded.resolve(sc.knowledge_pack)) if sc.knowledge_pack else None
    backend = ScriptedBackend.from_dir([loaded.resolve(f) for f in sc.fixtures])
    schedule = list(sc.fault_schedule) if fault_schedule is None else fault_schedule
    if schedule:
        backend = FaultInjectingBackend(backend, schedule)
    orchestrator = Orchestrator(ws, backend, StubToolchain(), kb, budgets or sc.budgets)
    return ws, orchestrator.run()


def run_scenario(
    path: Union[str, Path, LoadedScenario],
    budgets: Optional[Budgets] = None,
    workspace: Optional[Union[str, Path]] = None,
    fault_schedule: Optional[list[FaultSpec]] = None,
) -> ScenarioResult:
    """Run once and compare against the expectations.

    Without ``workspace`` the run happens in a temporary directory that is
    removed afterwards.
    """
    loaded = path if isinstance(path, LoadedScenario) else load_scenario(path)
    budgets = budgets or loaded.scenario.budgets
    if workspace is None:
        with tempfile.TemporaryDirectory(prefix="appforge-") as tmp:
            return run_scenario(loaded, budgets, Path(tmp) / "ws", fault_schedule)
    ws, outcome = execute(loaded, workspace, budgets, fault_schedule)
    _raise_gap(outcome)
    metrics = collect_metrics(ws, outcome)
    mismatches = check(loaded.scenario.expectations, metrics, budgets)
    return ScenarioResult(loaded.scenario.name, not mismatches, mismatches, metrics, outcome, budgets)


# -- sweeps ------------------------------------------------------------------

SWEEP_COLUMNS = (
    "D", "P", "R", "fault_rate", "outcome", "plan_version", "iterations",
    *(f"feedback_{o}" for o in ORIGINS), "reuse_ratio", "compile_attempts_total",
    "compile_attempts_max", "improvement_records", "audit_items",
)


def _row(point: dict[str, Any], metrics: dict[str, Any]) -> dict[str, Any]:
    attempts = metrics["compile_attempts"].values()
    row = dict(point)
    row.update({
        "outcome": metrics["outcome"],
        "plan_version": metrics["plan_version"],
        "iterations": metrics["iterations"],
        "reuse_ratio": round(metrics["reuse_ratio"], 6),
        "compile_attempts_total": sum(attempts),
        "compile_attempts_max": max(attempts, default=0),
        "improvement_records": metrics["improvement_records"],
        "audit_items": metrics["audit_items"],
    })
    row.update({f"feedback_{o}": metrics["feedback"][o] for o in ORIGINS})
    return row


def sweep(
    path: Union[str, Path],
    grid: dict[str, list],
    seed: int = 0,
    persistent: bool = True,
    out: Optional[Union[str, Path]] = None,
    workers: int = 1,
) -> list[dict[str, Any]]:
    """One run per grid point over ``D``, ``P``, ``R`` and ``fault_rate``.

    Missing grid axes default to the scenario's budgets and a zero fault
    rate. The seed fixes the injected fault schedule of every point. Rows
    come back in grid order regardless of ``workers``.
    """
    loaded = load_scenario(path)
    base = loaded.scenario.budgets
    axes = {
        "D": grid.get("D") or [base.self_debug],
        "P": grid.get("P") or [base.plan_revision],
        "R": grid.get("R") or [base.rectification],
        "fault_rate": grid.get("fault_rate") or [0.0],
    }
    if not all(axes.values()):
        raise ValueError("sweep grid must be non-empty")
    modules = [e.module_id for e in AddDocument.loads(loaded.resolve(loaded.scenario.add).read_text()).elements]
    points = [dict(zip(axes, values)) for values in itertools.product(*axes.values())]

    def run_point(point: dict[str, Any]) -> dict[str, Any]:
        budgets = Budgets(self_debug=point["D"], plan_revision=point["P"], rectification=point["R"])
        schedule = list(loaded.scenario.fault_schedule) + generate_schedule(
            modules, point["fault_rate"], seed, persistent)
        try:
            result = run_scenario(loaded, budgets, fault_schedule=schedule)
        except FixtureGapError as exc:
            return {**point, "outcome": f"fixture-gap:{exc.kind}"}
        return _row(point, result.metrics)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_point, points))
    else:
        rows = [run_point(p) for p in points]
    if out is not None:
        write_table(rows, out)
    return rows


def write_table(rows: list[dict[str, Any]], out: Union[str, Path, IO[str]]) -> None:
    """Tab-separated metrics table to a path or an open text stream."""
    if not isinstance(out, (str, Path)):
        writer = csv.DictWriter(out, fieldnames=SWEEP_COLUMNS, delimiter="\t", restval="", lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        return
    with open(out, "w", newline="", encoding="utf-8") as fh:
        write_table(rows, fh)


def result_json(result: ScenarioResult) -> str:
    return json.dumps({"name": result.name, "passed": result.passed, "mismatches": result.mismatches,
                       "metrics": result.metrics}, indent=2, sort_keys=True)
