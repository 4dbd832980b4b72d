"""Coding agent: API manifest, unit generation, compilation, self-debugging, rectification."""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from typing import Optional

from appforge.backends import Backend, GenRequest
from appforge.copa import parse_library
from appforge.errors import BudgetExhausted, DependencyNotReadyError, SchemaError
from appforge.kb import KnowledgeBase, tokenize
from appforge.model import (
    ApiEntry,
    ApiManifest,
    CodePlan,
    CompilationLog,
    Defect,
    ImprovementRecord,
    PlanStep,
    ProjectStructure,
    SourceUnit,
    topo_order,
)
from appforge.toolchain import LaunchOutcome, Toolchain

MANIFEST_REF = "artifacts/manifest.json"


def declared_libraries(plan: CodePlan) -> dict[str, tuple[str, list[str]]]:
    """Library name -> (version constraint, declaring modules) from step tech constraints."""
    libs: dict[str, tuple[str, list[str]]] = {}
    for step in plan.steps:
        for constraint in step.tech_constraints:
            parsed = parse_library(constraint)
            if parsed:
                name, version = parsed
                libs.setdefault(name, (version, []))[1].append(step.module_id)
    return libs


def analyze_apis(plan: CodePlan, kb: Optional[KnowledgeBase], backend: Backend) -> ApiManifest:
    libs = declared_libraries(plan)
    knowledge = []
    if kb is not None and libs:
        words = set().union(*(tokenize(name) for name in libs))
        knowledge = [d.id for d in kb.query("coding", words, k=3, pillar="API Library")]
    context = {
        "libraries": [{"name": n, "version": v, "modules": ms} for n, (v, ms) in sorted(libs.items())],
        "constraints": sorted({c for s in plan.steps for c in s.tech_constraints}),
        "knowledge": knowledge,
    }
    proposal: ApiManifest = backend.generate(GenRequest.make("api-proposal", context)).payload

    merged: dict[str, ApiEntry] = {}
    for name, (version, modules) in libs.items():
        merged[name] = ApiEntry(library_name=name, version_constraint=version,
                                purpose="declared by " + ", ".join(modules))
    for entry in proposal.entries:
        prior = merged.get(entry.library_name)
        if prior is None:
            merged[entry.library_name] = entry
            continue
        merged[entry.library_name] = prior.model_copy(update={
            "elements_used": tuple(sorted(set(prior.elements_used) | set(entry.elements_used))),
            "purpose": entry.purpose or prior.purpose,
        })
    return ApiManifest(entries=tuple(merged[n] for n in sorted(merged)))


def _package_of(plan: CodePlan, module_id: str) -> str:
    paths = plan.placements().get(module_id, [])
    return ".".join(paths[0]) if paths else ""


def unit_context(step: PlanStep, plan: CodePlan, manifest: ApiManifest,
                 kb: Optional[KnowledgeBase] = None) -> dict:
    """Generation context: the step itself plus the contracts of its dependencies.

    Plan version and run ordinals are deliberately absent, so a module whose
    inputs are unchanged by a revision maps to the same fixture.
    """
    libs = {parse_library(c)[0] for c in step.tech_constraints if parse_library(c)}
    knowledge = []
    if kb is not None:
        words = set(tokenize(step.rationale)) | {c.method_name.lower() for c in step.contracts}
        words |= set().union(*(tokenize(n) for n in libs)) if libs else set()
        knowledge = [d.id for d in kb.query("coding", words, k=3)]
    return {
        "module_id": step.module_id,
        "package": _package_of(plan, step.module_id),
        "step": step.to_dict(),
        "dependencies": {
            dep: [c.to_dict() for c in plan.step(dep).contracts]
            for dep in plan.dependencies(step.module_id)
        },
        "libraries": [e.to_dict() for e in manifest.entries if e.library_name in libs],
        "knowledge": knowledge,
    }


def generate_unit(
    step: PlanStep,
    plan: CodePlan,
    structure: ProjectStructure,
    manifest: ApiManifest,
    backend: Backend,
    units: Mapping[str, SourceUnit],
    kb: Optional[KnowledgeBase] = None,
) -> SourceUnit:
    not_ready = [d for d in plan.dependencies(step.module_id)
                 if d not in units or units[d].status != "compiled"]
    if not_ready:
        raise DependencyNotReadyError(
            f"{step.module_id} waits on uncompiled dependencies: {', '.join(not_ready)}")
    req = GenRequest.make("source-unit", unit_context(step, plan, manifest, kb))
    body = backend.generate(req).payload
    return SourceUnit(path=structure.unit_path(step.module_id), module_id=step.module_id,
                      plan_version=plan.version, body=body, status="generated", debug_attempts=0)


def compile_unit(unit: SourceUnit, toolchain: Toolchain, units: Mapping[str, SourceUnit],
                 ordinal: int) -> tuple[CompilationLog, SourceUnit]:
    """Unit-scope compile; references may resolve against any already compiled unit."""
    if unit.status != "generated":
        raise ValueError(f"{unit.module_id} has status {unit.status}, expected generated")
    resolved = [u for m, u in sorted(units.items()) if m != unit.module_id and u.status == "compiled"]
    log = toolchain.compile(unit.path, [unit], ordinal, resolved)
    status = "compiled" if log.outcome == "success" else "failed"
    return log, unit.model_copy(update={"status": status})


def failure_messages(log: Optional[CompilationLog] = None, launch: Optional[LaunchOutcome] = None) -> list[str]:
    messages = []
    if log is not None:
        messages += [f"{d.error_type}: {d.message}" for d in log.diagnostics if d.severity == "error"]
    if launch is not None and not launch.ok:
        messages.append(f"launch failure: {launch.detail}")
    return messages


def self_debug(unit: SourceUnit, failure: Sequence[str], backend: Backend, budget: int,
               plan: CodePlan) -> SourceUnit:
    if unit.debug_attempts >= budget:
        raise BudgetExhausted(f"{unit.module_id}: self-debug budget {budget} spent")
    context = {
        "module_id": unit.module_id,
        "attempt": unit.debug_attempts + 1,
        "failure": list(failure),
        "body": unit.body.to_dict(),
        "step": plan.step(unit.module_id).to_dict(),
    }
    body = backend.generate(GenRequest.make("fix-snippet", context)).payload
    return unit.model_copy(update={
        "body": body, "status": "generated", "debug_attempts": unit.debug_attempts + 1,
    })


def integration_build(units: Sequence[SourceUnit], toolchain: Toolchain,
                      ordinal: int) -> tuple[CompilationLog, Optional[LaunchOutcome]]:
    """Whole-set compile, then the launch check if the compile succeeded."""
    pending = sorted(u.module_id for u in units if u.status != "compiled")
    if pending:
        raise DependencyNotReadyError("integration needs every unit compiled; pending: " + ", ".join(pending))
    log = toolchain.compile("integration", list(units), ordinal)
    if log.outcome == "failure":
        return log, None
    return log, toolchain.launch_check(list(units))


@dataclass(frozen=True)
class Rectification:
    changed: dict[str, SourceUnit]
    manifest: Optional[ApiManifest]
    record: Optional[ImprovementRecord]


def rectify(
    units: Mapping[str, SourceUnit],
    defects: Sequence[Defect],
    plan: CodePlan,
    manifest: ApiManifest,
    backend: Backend,
    *,
    counters: Mapping[str, int],
    budget: int,
    trigger: str,
    modules: Iterable[str] = (),
) -> Rectification:
    """One repair round over the units traced from ``defects`` (plus ``modules``).

    Returns the changed units (status reset to generated), the manifest if
    the backend adjusted it, and an unnumbered improvement record.
    """
    for d in defects:
        if counters.get(d.id, 0) >= budget:
            raise BudgetExhausted(f"defect {d.id}: rectification budget {budget} spent")
    targets = set(modules)
    for d in defects:
        owner = plan.contract_owner(d.trace.method_signature)
        if owner is not None:
            targets.add(owner)
    targets &= set(units)
    if not targets:
        return Rectification({}, None, None)
    order = [m for m in topo_order(plan.dep_graph) if m in targets]
    context = {
        "modules": order,
        "defects": [
            {"id": d.id, "description": d.description, "trace": d.trace.to_dict(),
             "test_input": d.test_input, "expected": d.expected, "actual": d.actual}
            for d in defects
        ],
        "bodies": {m: units[m].body.to_dict() for m in order},
        "steps": {m: plan.step(m).to_dict() for m in order},
        "manifest": manifest.to_dict(),
    }
    payload = backend.generate(GenRequest.make("rectification", context)).payload
    stray = sorted(set(payload.units) - targets)
    if stray:
        raise SchemaError(f"rectification touched units outside the defect trace: {', '.join(stray)}")
    changed = {}
    for m in order:
        body = payload.units.get(m)
        if body is not None and body != units[m].body:
            changed[m] = units[m].model_copy(update={
                "body": body, "status": "generated", "plan_version": plan.version,
            })
    new_manifest = payload.manifest if payload.manifest not in (None, manifest) else None
    paths = sorted(u.path for u in changed.values()) + ([MANIFEST_REF] if new_manifest else [])
    record = None
    if paths:
        record = ImprovementRecord(ordinal=0, trigger=trigger, changed_units=tuple(paths),
                                   plan_version_before=plan.version, plan_version_after=plan.version)
    return Rectification(changed, new_manifest, record)


def quality_check(units: Mapping[str, SourceUnit], plan: CodePlan) -> list[tuple[str, str]]:
    """Static pass: visibility and inheritance rules against the plan's arrangement rules."""
    issues = []
    rules = plan.arrangement_rules
    for module in sorted(units):
        allowed = rules.visibility.get(module)
        if allowed is None:
            continue
        for c in plan.step(module).contracts:
            if c.visibility not in allowed:
                issues.append((module, f"{c.signature} is {c.visibility}; allowed: {', '.join(allowed)}"))
    for child, parent in rules.inheritance:
        if child in units and parent not in plan.dependencies(child):
            issues.append((child, f"extends {parent} without depending on it"))
    return issues
