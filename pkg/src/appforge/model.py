"""Artifact types shared across the agents, plus the pure graph algorithms.

Every artifact is an immutable pydantic model that rejects unknown fields.
The canonical file form is sorted-key, two-space indented JSON with a
trailing newline; ``dumps(loads(text)) == text`` for any canonical text.
"""

from __future__ import annotations

import heapq
import json
from collections.abc import Iterable, Mapping
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from appforge.errors import CycleError, SchemaError, VersionError

Number = Union[int, float]
Visibility = Literal["public", "protected", "package", "private"]
CaseCategory = Literal["positive", "negative", "boundary", "exception", "property"]
FeedbackOrigin = Literal["compiler", "launch_check", "test_report", "quality_check"]


def canonical_json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


class Artifact(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    def to_dict(self) -> dict[str, Any]:
        return self.model_dump(mode="json")

    def dumps(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def parse(cls, data: Any):
        """Build an instance from a decoded JSON value, raising SchemaError."""
        try:
            return cls.model_validate(data)
        except ValidationError as exc:
            raise SchemaError(f"{cls.__name__}: {_first_error(exc)}") from exc

    @classmethod
    def loads(cls, text: str):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{cls.__name__}: invalid JSON ({exc})") from exc
        return cls.parse(data)


def _first_error(exc: ValidationError) -> str:
    err = exc.errors()[0]
    where = ".".join(str(p) for p in err["loc"]) or "<root>"
    return f"field '{where}': {err['msg']}"


# ---------------------------------------------------------------------------
# Input documents
# ---------------------------------------------------------------------------


class RequirementItem(Artifact):
    id: str = Field(min_length=1)
    kind: Literal["functional", "user-story", "acceptance-criterion"]
    text: str
    constraints: tuple[str, ...] = ()
    source_ref: str


class ParamSpec(Artifact):
    name: str = Field(min_length=1)
    semantic_type: str
    numeric_range: Optional[tuple[Number, Number]] = None
    invalid_classes: tuple[str, ...] = ()

    @model_validator(mode="after")
    def _check(self):
        if self.numeric_range is not None and self.numeric_range[0] > self.numeric_range[1]:
            raise ValueError(f"param {self.name}: numeric_range lo > hi")
        return self


class MethodContract(Artifact):
    signature: str = Field(min_length=1)
    visibility: Visibility = "public"
    params: tuple[ParamSpec, ...] = ()
    returns: str = "void"
    exception_conditions: tuple[str, ...] = ()
    nondeterministic: bool = False

    @model_validator(mode="after")
    def _check(self):
        names = [p.name for p in self.params]
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate parameter name in {self.signature}")
        return self

    @property
    def method_name(self) -> str:
        return self.signature.split("(", 1)[0].split()[-1]


class ArchElement(Artifact):
    module_id: str = Field(min_length=1)
    responsibilities: str = ""
    contracts: tuple[MethodContract, ...] = ()
    patterns: tuple[str, ...] = ()
    tech_constraints: tuple[str, ...] = ()
    depends_on: tuple[str, ...] = ()

    @model_validator(mode="after")
    def _check(self):
        sigs = [c.signature for c in self.contracts]
        if len(sigs) != len(set(sigs)):
            raise ValueError(f"duplicate contract signature in module {self.module_id}")
        return self


class TraceLink(Artifact):
    requirement_id: str = Field(min_length=1)
    module_id: str = Field(min_length=1)
    method_signature: str = Field(min_length=1)


class SrsDocument(Artifact):
    project: str
    requirements: tuple[RequirementItem, ...]
    trace_links: tuple[TraceLink, ...] = ()

    @model_validator(mode="after")
    def _check(self):
        ids = [r.id for r in self.requirements]
        if len(ids) != len(set(ids)):
            raise ValueError("requirement ids must be unique")
        return self


class AddDocument(Artifact):
    project: str
    elements: tuple[ArchElement, ...]

    @model_validator(mode="after")
    def _check(self):
        ids = [e.module_id for e in self.elements]
        if len(ids) != len(set(ids)):
            raise ValueError("module ids must be unique")
        return self


# ---------------------------------------------------------------------------
# Planning artifacts
# ---------------------------------------------------------------------------


class PlanStep(Artifact):
    module_id: str = Field(min_length=1)
    rationale: str = ""
    contracts: tuple[MethodContract, ...] = ()
    tech_constraints: tuple[str, ...] = ()


class PackageNode(Artifact):
    name: str = Field(min_length=1)
    modules: tuple[str, ...] = ()
    children: tuple[PackageNode, ...] = ()

    def walk(self, prefix: tuple[str, ...] = ()):
        """Yield ``(path, node)`` pairs depth-first, path as a name tuple."""
        path = prefix + (self.name,)
        yield path, self
        for child in self.children:
            yield from child.walk(path)


class ArrangementRules(Artifact):
    inheritance: tuple[tuple[str, str], ...] = ()
    visibility: dict[str, tuple[Visibility, ...]] = {}


class CodePlan(Artifact):
    version: int
    steps: tuple[PlanStep, ...]
    dep_graph: dict[str, tuple[str, ...]] = {}
    packages: PackageNode
    arrangement_rules: ArrangementRules = ArrangementRules()
    ambiguities: tuple[str, ...] = ()

    @property
    def module_ids(self) -> list[str]:
        return [s.module_id for s in self.steps]

    def step(self, module_id: str) -> PlanStep:
        for s in self.steps:
            if s.module_id == module_id:
                return s
        raise KeyError(module_id)

    def dependencies(self, module_id: str) -> list[str]:
        """Modules that ``module_id`` depends on (incoming edges)."""
        return sorted(u for u, vs in self.dep_graph.items() if module_id in vs)

    def placements(self) -> dict[str, list[tuple[str, ...]]]:
        found: dict[str, list[tuple[str, ...]]] = {}
        for path, node in self.packages.walk():
            for m in node.modules:
                found.setdefault(m, []).append(path)
        return found

    def contract_owner(self, signature: str) -> Optional[str]:
        owners = sorted(
            s.module_id for s in self.steps
            if any(c.signature == signature for c in s.contracts)
        )
        return owners[0] if owners else None


class DirEntry(Artifact):
    path: str
    role: Literal["source", "tests", "resources"]
    modules: tuple[str, ...] = ()


class ProjectStructure(Artifact):
    directories: tuple[DirEntry, ...]
    entry_points: dict[str, str] = {}
    dep_config: dict[str, str] = {}

    def source_dir(self, module_id: str) -> str:
        for d in self.directories:
            if d.role == "source" and module_id in d.modules:
                return d.path
        raise KeyError(module_id)

    def unit_path(self, module_id: str) -> str:
        return f"{self.source_dir(module_id)}/{module_id}.unit.json"


class ApiEntry(Artifact):
    library_name: str = Field(min_length=1)
    version_constraint: str = Field(min_length=1)
    elements_used: tuple[str, ...] = ()
    purpose: str = ""


class ApiManifest(Artifact):
    entries: tuple[ApiEntry, ...] = ()

    @model_validator(mode="after")
    def _check(self):
        names = [e.library_name for e in self.entries]
        if len(names) != len(set(names)):
            raise ValueError("library_name must be unique per manifest")
        return self


# ---------------------------------------------------------------------------
# Code artifacts
# ---------------------------------------------------------------------------


class DefectMarker(Artifact):
    kind: Literal["compile", "init", "logic"]
    detail: str
    target_signature: Optional[str] = None


class StubBody(Artifact):
    declares: tuple[str, ...] = ()
    references: tuple[str, ...] = ()
    defect_markers: tuple[DefectMarker, ...] = ()

    @model_validator(mode="after")
    def _check(self):
        if any(not s for s in self.declares + self.references):
            raise ValueError("symbol names must be non-empty")
        return self


class SourceUnit(Artifact):
    path: str
    module_id: str
    plan_version: int
    body: StubBody
    status: Literal["generated", "compiled", "failed"] = "generated"
    debug_attempts: int = 0


class Diagnostic(Artifact):
    severity: Literal["error", "warning"]
    error_type: str
    location: tuple[str, int]
    message: str
    suggested_fix: Optional[str] = None


class CompilationLog(Artifact):
    scope: str
    diagnostics: tuple[Diagnostic, ...] = ()
    outcome: Literal["success", "failure"]
    ordinal: int

    @model_validator(mode="after")
    def _check(self):
        failed = any(d.severity == "error" for d in self.diagnostics)
        if failed != (self.outcome == "failure"):
            raise ValueError("outcome must be failure iff an error diagnostic exists")
        return self

    @classmethod
    def from_diagnostics(cls, scope: str, diagnostics: Iterable[Diagnostic], ordinal: int) -> CompilationLog:
        diags = tuple(diagnostics)
        failed = any(d.severity == "error" for d in diags)
        return cls(scope=scope, diagnostics=diags, outcome="failure" if failed else "success", ordinal=ordinal)


class LaunchOutcome(Artifact):
    ok: bool
    module: Optional[str] = None
    unit_path: Optional[str] = None
    detail: str = ""


class QualityIssue(Artifact):
    module_id: str
    message: str


class QualityReport(Artifact):
    issues: tuple[QualityIssue, ...] = ()


# ---------------------------------------------------------------------------
# Testing artifacts
# ---------------------------------------------------------------------------


class Trace(Artifact):
    requirement_id: str = Field(min_length=1)
    method_signature: str = Field(min_length=1)


class TestCase(Artifact):
    __test__ = False

    id: str = Field(min_length=1)
    category: CaseCategory
    trace: Trace
    input_values: dict[str, Any] = {}
    oracle: dict[str, Any] = {}
    status: Literal["pending", "passed", "failed", "regenerated"] = "pending"

    @property
    def module_id(self) -> str:
        return self.id.split("::", 1)[0]


class Defect(Artifact):
    id: str
    severity: Literal["blocker", "major", "minor"]
    description: str
    test_input: dict[str, Any] = {}
    expected: dict[str, Any] = {}
    actual: dict[str, Any] = {}
    trace: Trace


class TestReport(Artifact):
    __test__ = False

    coverage: float = Field(ge=0.0, le=1.0)
    case_results: dict[str, Literal["passed", "failed"]] = {}
    defects: tuple[Defect, ...] = ()
    ordinal: int


class MappingTarget(Artifact):
    module_id: str
    method_signature: str


class TestPlan(Artifact):
    __test__ = False

    framework: str
    mappings: dict[str, tuple[MappingTarget, ...]] = {}
    untestable: dict[str, str] = {}
    scope_notes: tuple[str, ...] = ()


class TraceRow(Artifact):
    requirement_id: str
    module_id: str
    method_signature: str
    test_case_ids: tuple[str, ...] = ()


class TraceabilityMatrix(Artifact):
    rows: tuple[TraceRow, ...] = ()


# ---------------------------------------------------------------------------
# Loop artifacts
# ---------------------------------------------------------------------------


class FeedbackEvent(Artifact):
    origin: FeedbackOrigin
    payload_ref: str
    subject: str
    counters: dict[str, int] = {}


class ImprovementRecord(Artifact):
    ordinal: int
    trigger: str
    changed_units: tuple[str, ...] = ()
    plan_version_before: int
    plan_version_after: int

    @model_validator(mode="after")
    def _check(self):
        if self.plan_version_after < self.plan_version_before:
            raise ValueError("plan_version_after must be >= plan_version_before")
        return self


class Budgets(Artifact):
    self_debug: int = Field(default=3, ge=0)
    plan_revision: int = Field(default=2, ge=0)
    rectification: int = Field(default=3, ge=0)

    @classmethod
    def from_triple(cls, text: str) -> Budgets:
        try:
            d, p, r = (int(x) for x in text.split(","))
        except ValueError as exc:
            raise SchemaError(f"budgets must be 'D,P,R', got {text!r}") from exc
        return cls(self_debug=d, plan_revision=p, rectification=r)


class PipelineState(Artifact):
    state: Literal[
        "Planning", "Structuring", "ApiAnalysis", "Generating", "Compiling",
        "SelfDebugging", "Revising", "Rebuilding", "IntegrationCheck", "Testing",
        "Rectifying", "Escalated", "Done",
    ]
    module: Optional[str] = None
    reason: Optional[str] = None
    ref: Optional[str] = None
    counters: dict[str, int] = {}

    @property
    def label(self) -> str:
        if self.module:
            return f"{self.state}({self.module})"
        if self.reason:
            return f"{self.state}({self.reason})"
        return self.state


class Directive(Artifact):
    action: Literal["amend", "skip", "abort"]
    plan: Optional[CodePlan] = None
    unit_body: Optional[StubBody] = None
    note: str = ""

    @model_validator(mode="after")
    def _check(self):
        if self.action == "amend" and (self.plan is None) == (self.unit_body is None):
            raise ValueError("amend needs exactly one of 'plan' or 'unit_body'")
        return self


class AuditItem(Artifact):
    id: str
    ordinal: int
    status: Literal["open", "resolved", "closed"] = "open"
    reason: str
    subject: str
    event: Optional[FeedbackEvent] = None
    evidence: dict[str, tuple[str, ...]] = {}
    resume_state: PipelineState
    resolution: Optional[Directive] = None


class AuditQueue(Artifact):
    items: tuple[AuditItem, ...] = ()


class KnowledgeDoc(Artifact):
    id: str = Field(min_length=1)
    corpus: Literal["srs-add", "coding", "testing"]
    pillar: str
    keywords: tuple[str, ...] = ()
    body: str = ""


# ---------------------------------------------------------------------------
# Graph algorithms
# ---------------------------------------------------------------------------


def _nodes(graph: Mapping[str, Iterable[str]]) -> set[str]:
    nodes = set(graph)
    for targets in graph.values():
        nodes.update(targets)
    return nodes


def topo_order(graph: Mapping[str, Iterable[str]]) -> list[str]:
    """Kahn's algorithm; ``u -> v`` places ``u`` first, ties go to the smallest id."""
    nodes = _nodes(graph)
    indegree = dict.fromkeys(nodes, 0)
    for targets in graph.values():
        for v in set(targets):
            indegree[v] += 1
    ready = [n for n in nodes if indegree[n] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        u = heapq.heappop(ready)
        order.append(u)
        for v in sorted(set(graph.get(u, ()))):
            indegree[v] -= 1
            if indegree[v] == 0:
                heapq.heappush(ready, v)
    if len(order) != len(nodes):
        raise CycleError(find_cycle(graph, nodes - set(order)))
    return order


def find_cycle(graph: Mapping[str, Iterable[str]], candidates: set[str]) -> list[str]:
    # Every leftover node of Kahn's algorithm has a predecessor among the
    # leftovers, so walking backwards must revisit a node.
    preds: dict[str, list[str]] = {n: [] for n in candidates}
    for u, targets in graph.items():
        if u in candidates:
            for v in targets:
                if v in candidates:
                    preds[v].append(u)
    node = min(candidates)
    seen: list[str] = []
    while node not in seen:
        seen.append(node)
        node = min(preds[node])
    cycle = seen[seen.index(node):]
    cycle.reverse()
    start = cycle.index(min(cycle))
    return cycle[start:] + cycle[:start]


def reachable(graph: Mapping[str, Iterable[str]], sources: Iterable[str]) -> set[str]:
    """Sources plus every node reachable from them along edges."""
    seen = set(sources)
    stack = list(seen)
    while stack:
        u = stack.pop()
        for v in graph.get(u, ()):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


class ContractChange(Artifact):
    module_id: str
    signature: str
    change: Literal["added", "removed", "modified"]


class PlanDiff(Artifact):
    changed_contracts: tuple[ContractChange, ...] = ()
    changed_steps: tuple[str, ...] = ()
    changed_deps: tuple[str, ...] = ()
    changed_packages: tuple[str, ...] = ()
    changed_rules: tuple[str, ...] = ()
    added_modules: tuple[str, ...] = ()
    removed_modules: tuple[str, ...] = ()
    package_tree_changed: bool = False
    ambiguities_changed: bool = False
    reorder_only: bool = False

    @property
    def is_empty(self) -> bool:
        return self == PlanDiff()

    def seed_modules(self) -> set[str]:
        seeds = {c.module_id for c in self.changed_contracts}
        seeds.update(self.changed_steps, self.changed_deps, self.changed_packages,
                     self.changed_rules, self.added_modules)
        return seeds - set(self.removed_modules)


def _edges(plan: CodePlan) -> set[tuple[str, str]]:
    return {(u, v) for u, vs in plan.dep_graph.items() for v in vs}


def _rule_modules(plan: CodePlan) -> dict[str, tuple]:
    rules: dict[str, list] = {}
    for child, parent in plan.arrangement_rules.inheritance:
        rules.setdefault(child, []).append(("extends", parent))
    for module, allowed in plan.arrangement_rules.visibility.items():
        rules.setdefault(module, []).append(("visibility", tuple(sorted(allowed))))
    return {m: tuple(sorted(v)) for m, v in rules.items()}


def plan_diff(old: CodePlan, new: CodePlan) -> PlanDiff:
    if new.version != old.version + 1:
        raise VersionError(f"expected version {old.version + 1}, got {new.version}")
    old_steps = {s.module_id: s for s in old.steps}
    new_steps = {s.module_id: s for s in new.steps}
    common = sorted(set(old_steps) & set(new_steps))

    contracts: list[ContractChange] = []
    changed_steps = []
    for m in common:
        before = {c.signature: c for c in old_steps[m].contracts}
        after = {c.signature: c for c in new_steps[m].contracts}
        for sig in sorted(set(before) | set(after)):
            if sig not in after:
                contracts.append(ContractChange(module_id=m, signature=sig, change="removed"))
            elif sig not in before:
                contracts.append(ContractChange(module_id=m, signature=sig, change="added"))
            elif before[sig] != after[sig]:
                contracts.append(ContractChange(module_id=m, signature=sig, change="modified"))
        o, n = old_steps[m], new_steps[m]
        if (o.rationale, o.tech_constraints) != (n.rationale, n.tech_constraints) or (
            set(before) == set(after)
            and [c.signature for c in o.contracts] != [c.signature for c in n.contracts]
        ):
            changed_steps.append(m)

    changed_deps = [m for m in common if old.dependencies(m) != new.dependencies(m)]
    old_place, new_place = old.placements(), new.placements()
    changed_packages = [m for m in common if old_place.get(m) != new_place.get(m)]
    old_rules, new_rules = _rule_modules(old), _rule_modules(new)
    changed_rules = sorted(
        m for m in set(old_rules) | set(new_rules)
        if old_rules.get(m) != new_rules.get(m) and m in new_steps
    )
    old_tree = sorted(p for p, _ in old.packages.walk())
    new_tree = sorted(p for p, _ in new.packages.walk())

    diff = PlanDiff(
        changed_contracts=tuple(contracts),
        changed_steps=tuple(changed_steps),
        changed_deps=tuple(changed_deps),
        changed_packages=tuple(changed_packages),
        changed_rules=tuple(changed_rules),
        added_modules=tuple(sorted(set(new_steps) - set(old_steps))),
        removed_modules=tuple(sorted(set(old_steps) - set(new_steps))),
        package_tree_changed=old_tree != new_tree,
        ambiguities_changed=old.ambiguities != new.ambiguities,
    )
    if diff.is_empty and old.module_ids != new.module_ids:
        diff = diff.model_copy(update={"reorder_only": True})
    return diff


def conflict_set(diff: PlanDiff, graph: Mapping[str, Iterable[str]]) -> set[str]:
    """Changed modules plus all of their transitive dependents."""
    if diff.reorder_only:
        return set()
    return reachable(graph, diff.seed_modules()) - set(diff.removed_modules)


def validate_plan(plan: CodePlan, elements: Iterable[ArchElement]) -> list[str]:
    """Return every invariant violation of ``plan`` against the ADD; empty means ok."""
    violations: list[str] = []
    if plan.version < 1:
        violations.append(f"version {plan.version} < 1")
    planned = plan.module_ids
    planned_set = set(planned)
    for m in sorted(_nodes(plan.dep_graph) - planned_set):
        violations.append(f"unknown module {m} in dep_graph")
    try:
        topo_order(plan.dep_graph)
    except CycleError as exc:
        violations.append("cycle: " + " -> ".join(exc.members + exc.members[:1]))
    else:
        position = {m: i for i, m in enumerate(planned)}
        for u, v in sorted(_edges(plan)):
            if u in position and v in position and position[u] > position[v]:
                violations.append(f"order: step {v} precedes its dependency {u}")
    seen: set[str] = set()
    for m in planned:
        if m in seen:
            violations.append(f"duplicate step {m}")
        seen.add(m)
    elements = list(elements)
    declared = {e.module_id for e in elements}
    for e in elements:
        if e.module_id not in planned_set:
            violations.append(f"unplanned module {e.module_id}")
        for d in e.depends_on:
            if d in declared and (d, e.module_id) not in _edges(plan):
                violations.append(f"missing dependency {d} -> {e.module_id}")
    placements = plan.placements()
    for m in sorted(planned_set):
        count = len(placements.get(m, []))
        if count == 0:
            violations.append(f"unplaced module {m}")
        elif count > 1:
            violations.append(f"module {m} placed in {count} packages")
    for m in sorted(set(placements) - planned_set):
        violations.append(f"placed module {m} has no step")
    return violations
