"""Planning agent: document analysis, code plan generation and revision, project structure."""

from __future__ import annotations

import re
from collections.abc import Sequence
from typing import Optional, Union

from appforge.backends import Backend, GenRequest
from appforge.errors import CycleError, NoChangeError, PlanValidationError
from appforge.kb import KnowledgeBase, tokenize
from appforge.model import (
    AddDocument,
    ArchElement,
    Artifact,
    CodePlan,
    DirEntry,
    FeedbackEvent,
    ProjectStructure,
    RequirementItem,
    SrsDocument,
    plan_diff,
    topo_order,
    validate_plan,
)

BUILTIN_TYPES = frozenset({
    "void", "int", "long", "short", "byte", "char", "float", "double", "boolean",
    "bool", "str", "string", "String", "Integer", "Long", "Double", "Float",
    "Boolean", "Character", "Object", "List", "Map", "Set", "Optional",
})

_LIBRARY = re.compile(r"^lib:\s*(?P<name>[^@]+?)\s*@\s*(?P<version>\S.*)$")


def parse_library(constraint: str) -> Optional[tuple[str, str]]:
    """``"lib:JavaFX Graphics@>=17"`` -> ``("JavaFX Graphics", ">=17")``."""
    m = _LIBRARY.match(constraint.strip())
    return (m.group("name"), m.group("version").strip()) if m else None


def _base_types(type_name: str) -> list[str]:
    return [t for t in re.findall(r"[A-Za-z_][A-Za-z0-9_]*", type_name)]


class AnalysisResult(Artifact):
    requirements: tuple[RequirementItem, ...]
    elements: tuple[ArchElement, ...]
    constraints: tuple[str, ...] = ()
    ambiguities: tuple[str, ...] = ()


def _as_srs(srs: Union[SrsDocument, dict]) -> SrsDocument:
    return srs if isinstance(srs, SrsDocument) else SrsDocument.parse(srs)


def _as_add(add: Union[AddDocument, dict]) -> AddDocument:
    return add if isinstance(add, AddDocument) else AddDocument.parse(add)


def analyze_documents(srs: Union[SrsDocument, dict], add: Union[AddDocument, dict]) -> AnalysisResult:
    """Extract requirements and elements and record cross-reference ambiguities.

    Ambiguities are prefixed with the locator of the offending source entry.
    """
    srs, add = _as_srs(srs), _as_add(add)
    modules = {e.module_id: e for e in add.elements}
    known_types = BUILTIN_TYPES | set(modules)
    ambiguities: list[str] = []

    for e in add.elements:
        for dep in e.depends_on:
            if dep not in modules:
                ambiguities.append(f"ADD:{e.module_id}: undeclared dependency {dep}")
        for c in e.contracts:
            named = [p.semantic_type for p in c.params] + [c.returns]
            unknown = sorted({t for name in named for t in _base_types(name)} - known_types)
            for t in unknown:
                ambiguities.append(f"ADD:{e.module_id}.{c.method_name}: unknown type {t}")

    linked: dict[str, int] = {}
    for link in srs.trace_links:
        element = modules.get(link.module_id)
        if element is None:
            ambiguities.append(f"SRS trace {link.requirement_id}: unknown module {link.module_id}")
        elif not any(c.signature == link.method_signature for c in element.contracts):
            ambiguities.append(
                f"SRS trace {link.requirement_id}: {link.module_id} has no contract {link.method_signature}")
        else:
            linked[link.requirement_id] = linked.get(link.requirement_id, 0) + 1
    req_ids = {r.id for r in srs.requirements}
    for link in srs.trace_links:
        if link.requirement_id not in req_ids:
            ambiguities.append(f"SRS trace {link.requirement_id}: unknown requirement")
    for r in srs.requirements:
        if r.id not in linked:
            ambiguities.append(f"{r.source_ref}: requirement {r.id} mapped to no module")

    constraints: list[str] = []
    for item in [c for r in srs.requirements for c in r.constraints] + [
        c for e in add.elements for c in e.tech_constraints
    ]:
        if item not in constraints:
            constraints.append(item)

    return AnalysisResult(
        requirements=srs.requirements,
        elements=add.elements,
        constraints=tuple(constraints),
        ambiguities=tuple(dict.fromkeys(ambiguities)),
    )


def _knowledge_ids(kb: Optional[KnowledgeBase], corpus: str, text: str, k: int = 3) -> list[str]:
    if kb is None:
        return []
    return [d.id for d in kb.query(corpus, tokenize(text), k=k)]


def normalize_plan(plan: CodePlan, elements: Sequence[ArchElement], version: int) -> CodePlan:
    """Complete the dep graph, sort steps topologically, stamp the version and validate."""
    modules = set(plan.module_ids)
    graph = {m: tuple(sorted(set(plan.dep_graph.get(m, ())))) for m in sorted(modules | set(plan.dep_graph))}
    try:
        order = topo_order(graph)
    except CycleError as exc:
        raise PlanValidationError(["cycle: " + " -> ".join(exc.members + exc.members[:1])]) from exc
    position = {m: i for i, m in enumerate(order)}
    steps = tuple(sorted(plan.steps, key=lambda s: position[s.module_id]))
    normalized = plan.model_copy(update={"version": version, "steps": steps, "dep_graph": graph})
    normalized = CodePlan.parse(normalized.to_dict())
    violations = validate_plan(normalized, elements)
    if violations:
        raise PlanValidationError(violations)
    return normalized


def generate_plan(analysis: AnalysisResult, kb: Optional[KnowledgeBase], backend: Backend) -> CodePlan:
    context = {
        "requirements": [{"id": r.id, "text": r.text} for r in analysis.requirements],
        "elements": [e.to_dict() for e in analysis.elements],
        "constraints": list(analysis.constraints),
        "ambiguities": list(analysis.ambiguities),
        "knowledge": _knowledge_ids(kb, "srs-add", " ".join(analysis.constraints)),
    }
    proposal = backend.generate(GenRequest.make("plan-proposal", context)).payload
    ambiguities = tuple(dict.fromkeys(analysis.ambiguities + proposal.ambiguities))
    proposal = proposal.model_copy(update={"ambiguities": ambiguities})
    return normalize_plan(proposal, analysis.elements, version=1)


def generate_structure(plan: CodePlan) -> ProjectStructure:
    dirs: list[DirEntry] = []
    for path, node in plan.packages.walk():
        dirs.append(DirEntry(path="src/" + "/".join(path), role="source", modules=tuple(sorted(node.modules))))
    for m in sorted(plan.module_ids):
        dirs.append(DirEntry(path=f"tests/{m}", role="tests", modules=(m,)))
    dirs.append(DirEntry(path="resources", role="resources"))
    structure = ProjectStructure(directories=tuple(sorted(dirs, key=lambda d: d.path)))

    roots = [m for m in plan.module_ids if not plan.dep_graph.get(m)]
    deps: dict[str, str] = {}
    for step in plan.steps:
        for constraint in step.tech_constraints:
            lib = parse_library(constraint)
            if lib:
                deps.setdefault(lib[0], lib[1])
    return structure.model_copy(update={
        "entry_points": {m: structure.source_dir(m) for m in sorted(roots)},
        "dep_config": dict(sorted(deps.items())),
    })


def revise_plan(
    plan: CodePlan,
    event: FeedbackEvent,
    srs: Union[SrsDocument, dict],
    add: Union[AddDocument, dict],
    kb: Optional[KnowledgeBase],
    backend: Backend,
    failure: Sequence[str] = (),
) -> CodePlan:
    """Ask the backend for plan version N+1 addressing ``event``.

    ``failure`` carries the diagnostic messages from the event's payload; the
    requirements and ADD element traced to the failing module are attached
    mechanically.
    """
    if event.origin not in ("compiler", "launch_check"):
        raise ValueError(f"plan revision is not driven by {event.origin} feedback")
    srs, add = _as_srs(srs), _as_add(add)
    subject = event.subject
    traced = sorted({link.requirement_id for link in srs.trace_links if link.module_id == subject})
    context = {
        "plan": plan.to_dict(),
        "subject": subject,
        "origin": event.origin,
        "failure": list(failure),
        "requirements": [{"id": r.id, "text": r.text} for r in srs.requirements if r.id in traced],
        "elements": [e.to_dict() for e in add.elements if e.module_id == subject],
        "knowledge": _knowledge_ids(kb, "srs-add", " ".join(failure)),
    }
    proposal = backend.generate(GenRequest.make("plan-revision", context)).payload
    revised = normalize_plan(proposal, add.elements, version=plan.version + 1)
    if plan_diff(plan, revised).is_empty:
        raise NoChangeError(f"revision of plan v{plan.version} changed nothing")
    return revised

