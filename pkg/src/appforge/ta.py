"""Testing agent: test plan, deterministic case derivation, execution and reporting."""

from __future__ import annotations

import hashlib
import json
import math
from collections.abc import Iterable, Mapping, Sequence
from typing import Any, Optional, Union

from appforge.errors import RangeError, UnmappableRequirementError
from appforge.kb import KnowledgeBase, tokenize
from appforge.model import (
    CodePlan,
    Defect,
    MappingTarget,
    MethodContract,
    ParamSpec,
    SourceUnit,
    SrsDocument,
    TestCase,
    TestPlan,
    TestReport,
    Trace,
    TraceabilityMatrix,
    TraceRow,
    topo_order,
)
from appforge.toolchain import Toolchain

INTEGER_TYPES = frozenset({"int", "long", "short", "byte", "Integer", "Long", "Short", "Byte"})
REAL_TYPES = frozenset({"float", "double", "Float", "Double", "number", "real"})
OUT_OF_RANGE = "out-of-range"
PROPERTY_SAMPLES = 100


def is_numeric(param: ParamSpec) -> bool:
    return param.semantic_type in INTEGER_TYPES or param.semantic_type in REAL_TYPES


def boundary_step(param: ParamSpec, limit: Union[int, float]) -> Union[int, float]:
    """One step outside a limit: 1 for integers, else width * 1e-6 but at least one ulp."""
    if param.semantic_type in INTEGER_TYPES:
        return 1
    lo, hi = param.numeric_range
    return max((hi - lo) * 1e-6, math.ulp(float(limit)))


def nominal_value(param: ParamSpec) -> Any:
    if param.numeric_range is not None:
        lo, hi = param.numeric_range
        if param.semantic_type in INTEGER_TYPES:
            return (lo + hi) // 2
        return (lo + hi) / 2
    if param.semantic_type in INTEGER_TYPES:
        return 1
    if param.semantic_type in REAL_TYPES:
        return 1.0
    if param.semantic_type in ("boolean", "bool", "Boolean"):
        return True
    if param.semantic_type in ("String", "string", "str"):
        return "nominal"
    return f"<{param.semantic_type}>"


def _seed(case_id: str) -> int:
    return int(hashlib.sha256(case_id.encode()).hexdigest()[:8], 16)


def derive_test_cases(contract: MethodContract, requirement_id: str, module_id: str) -> list[TestCase]:
    """Cases for one contract, in category order.

    One positive case, one negative per invalid class, a boundary pair at
    each end of every numeric range, one case per exception condition, and a
    seeded property case when the contract is nondeterministic.
    """
    for p in contract.params:
        if p.numeric_range is None and any(c.startswith(OUT_OF_RANGE) for c in p.invalid_classes):
            raise RangeError(f"{contract.signature}: parameter {p.name} needs a numeric_range "
                             f"for its {OUT_OF_RANGE} class")
    trace = Trace(requirement_id=requirement_id, method_signature=contract.signature)
    nominal = {p.name: nominal_value(p) for p in contract.params}
    cases: list[TestCase] = []
    counters: dict[str, int] = {}

    def add(category: str, inputs: dict[str, Any], oracle: dict[str, Any]) -> None:
        counters[category] = counters.get(category, 0) + 1
        case_id = f"{module_id}::{contract.signature}::{category}#{counters[category]}"
        cases.append(TestCase(id=case_id, category=category, trace=trace,
                              input_values=inputs, oracle=oracle))

    add("positive", dict(nominal), {"expect": "accepted", "returns": contract.returns})
    for p in contract.params:
        for cls in p.invalid_classes:
            add("negative", {**nominal, p.name: f"<invalid:{cls}>"},
                {"expect": "rejected", "param": p.name, "class": cls})
    for p in contract.params:
        if p.numeric_range is None:
            continue
        lo, hi = p.numeric_range
        for side, limit, sign in (("lower", lo, -1), ("upper", hi, 1)):
            outside = limit + sign * boundary_step(p, limit)
            add("boundary", {**nominal, p.name: limit},
                {"expect": "accepted", "param": p.name, "limit": side})
            add("boundary", {**nominal, p.name: outside},
                {"expect": "rejected", "param": p.name, "limit": side})
    for condition in contract.exception_conditions:
        add("exception", dict(nominal), {"expect": "raises", "condition": condition})
    if contract.nondeterministic:
        case_id = f"{module_id}::{contract.signature}::property#1"
        generator = {
            "kind": "seeded-random",
            "seed": _seed(case_id),
            "samples": PROPERTY_SAMPLES,
            "params": {p.name: list(p.numeric_range) if p.numeric_range else p.semantic_type
                       for p in contract.params},
        }
        add("property", {"generator": generator}, {"expect": "property-holds"})
    return cases


def expected_case_count(contract: MethodContract) -> int:
    ranged = sum(1 for p in contract.params if p.numeric_range is not None)
    return (1 + sum(len(p.invalid_classes) for p in contract.params) + 4 * ranged
            + len(contract.exception_conditions) + int(contract.nondeterministic))


def choose_framework(plan: CodePlan, kb: Optional[KnowledgeBase]) -> str:
    if kb is None:
        return "unspecified"
    words: set[str] = set()
    for step in plan.steps:
        for c in step.tech_constraints:
            words |= tokenize(c)
    hits = kb.query("testing", words, k=1, pillar="Testing Tools")
    if not hits:
        return "unspecified"
    return hits[0].body.strip().splitlines()[0] if hits[0].body.strip() else hits[0].id


def generate_test_plan(
    srs: SrsDocument,
    plan: CodePlan,
    units: Mapping[str, SourceUnit],
    kb: Optional[KnowledgeBase],
    strict: bool = False,
) -> TestPlan:
    contracts = {(s.module_id, c.signature) for s in plan.steps for c in s.contracts}
    mappings: dict[str, list[MappingTarget]] = {}
    notes = []
    for link in srs.trace_links:
        key = (link.module_id, link.method_signature)
        if key not in contracts:
            notes.append(f"dropped link {link.requirement_id} -> {link.module_id}.{link.method_signature}: "
                         "not in plan")
            continue
        target = MappingTarget(module_id=link.module_id, method_signature=link.method_signature)
        if target not in mappings.setdefault(link.requirement_id, []):
            mappings[link.requirement_id].append(target)
    untestable = {}
    for r in srs.requirements:
        if r.kind == "functional" and r.id not in mappings:
            if strict:
                raise UnmappableRequirementError(f"requirement {r.id} maps to no planned contract")
            untestable[r.id] = "no planned method contract is linked to this requirement"
    targets = sorted({t.module_id for ts in mappings.values() for t in ts})
    notes += [f"target {m}Test -> {m}" for m in targets if m in units or not units]
    notes.append("dependencies are not mocked; cases execute against the generated units")
    return TestPlan(
        framework=choose_framework(plan, kb),
        mappings={r: tuple(sorted(ts, key=lambda t: (t.module_id, t.method_signature)))
                  for r, ts in sorted(mappings.items())},
        untestable=untestable,
        scope_notes=tuple(notes),
    )


def build_cases(test_plan: TestPlan, plan: CodePlan) -> tuple[list[TestCase], TraceabilityMatrix]:
    """Derive cases once per mapped contract and the requirement-level matrix over them.

    A contract linked to several requirements carries the smallest
    requirement id in its trace; every linked requirement gets a matrix row.
    """
    linked: dict[tuple[str, str], list[str]] = {}
    for req, targets in test_plan.mappings.items():
        for t in targets:
            linked.setdefault((t.module_id, t.method_signature), []).append(req)
    position = {m: i for i, m in enumerate(topo_order(plan.dep_graph))}
    cases: list[TestCase] = []
    by_contract: dict[tuple[str, str], list[str]] = {}
    for module, sig in sorted(linked, key=lambda k: (position.get(k[0], len(position)), k)):
        contract = next(c for c in plan.step(module).contracts if c.signature == sig)
        derived = derive_test_cases(contract, min(linked[(module, sig)]), module)
        cases.extend(derived)
        by_contract[(module, sig)] = [c.id for c in derived]
    rows = [
        TraceRow(requirement_id=req, module_id=module, method_signature=sig,
                 test_case_ids=tuple(by_contract[(module, sig)]))
        for (module, sig), reqs in linked.items() for req in reqs
    ]
    rows.sort(key=lambda r: (r.requirement_id, r.module_id, r.method_signature))
    return cases, TraceabilityMatrix(rows=tuple(rows))


def regenerate_affected(matrix: TraceabilityMatrix, changed_req_ids: Iterable[str],
                        changed_signatures: Iterable[str]) -> frozenset[str]:
    reqs, sigs = set(changed_req_ids), set(changed_signatures)
    return frozenset(
        case_id
        for row in matrix.rows
        if row.requirement_id in reqs or row.method_signature in sigs
        for case_id in row.test_case_ids
    )


def rederive(previous: Sequence[TestCase], affected: Iterable[str], test_plan: TestPlan,
             plan: CodePlan) -> tuple[list[TestCase], TraceabilityMatrix]:
    """Fresh derivation; affected ids are marked regenerated, others keep their status."""
    affected = set(affected)
    before = {c.id: c for c in previous}
    cases, matrix = build_cases(test_plan, plan)
    out = []
    for c in cases:
        if c.id in affected:
            out.append(c.model_copy(update={"status": "regenerated"}))
        elif c.id in before and before[c.id] == c.model_copy(update={"status": before[c.id].status}):
            out.append(before[c.id])
        else:
            out.append(c)
    return out, matrix


def _severity(case: TestCase, duplicate: bool) -> str:
    if duplicate:
        return "minor"
    return "blocker" if case.category in ("exception", "boundary") else "major"


def execute_and_report(
    cases: Sequence[TestCase],
    units: Sequence[SourceUnit],
    toolchain: Toolchain,
    plan: CodePlan,
    ordinal: int,
    open_defects: Sequence[Defect] = (),
) -> tuple[TestReport, list[TestCase]]:
    """Run every case in id order and build the report.

    A failure whose method and actual result repeat an earlier failure (in
    this report or among ``open_defects``) is filed as a minor duplicate.
    """
    ordered = sorted(cases, key=lambda c: c.id)
    results = toolchain.run_tests(ordered, units)
    planned = {(s.module_id, c.signature) for s in plan.steps for c in s.contracts}
    exercised = {(c.module_id, c.trace.method_signature) for c in ordered} & planned
    coverage = len(exercised) / len(planned) if planned else 1.0

    def key(signature: str, actual: dict) -> str:
        return signature + "|" + json.dumps(actual, sort_keys=True)

    seen = {key(d.trace.method_signature, d.actual) for d in open_defects}
    defects, updated, case_results = [], [], {}
    for case in ordered:
        result = results[case.id]
        case_results[case.id] = "passed" if result.passed else "failed"
        updated.append(case.model_copy(update={"status": case_results[case.id]}))
        if result.passed:
            continue
        k = key(case.trace.method_signature, result.actual)
        defects.append(Defect(
            id=f"DEF::{case.id}",
            severity=_severity(case, k in seen),
            description=f"{case.category} case failed for {case.trace.method_signature}"
                        + (f": {result.actual['detail']}" if "detail" in result.actual else ""),
            test_input=case.input_values,
            expected=case.oracle,
            actual=result.actual,
            trace=case.trace,
        ))
        seen.add(k)
    report = TestReport(coverage=coverage, case_results=case_results, defects=tuple(defects), ordinal=ordinal)
    return report, updated
