"""Hypothesis strategies producing valid instances of every artifact type."""

from __future__ import annotations

from hypothesis import strategies as st

from appforge.backends import FaultSpec, RectificationPayload
from appforge.copa import AnalysisResult
from appforge.model import (
    AddDocument,
    ApiEntry,
    ApiManifest,
    ArchElement,
    ArrangementRules,
    AuditItem,
    AuditQueue,
    Budgets,
    CodePlan,
    CompilationLog,
    ContractChange,
    Defect,
    DefectMarker,
    Diagnostic,
    DirEntry,
    Directive,
    FeedbackEvent,
    ImprovementRecord,
    KnowledgeDoc,
    LaunchOutcome,
    MappingTarget,
    MethodContract,
    PackageNode,
    ParamSpec,
    PipelineState,
    PlanDiff,
    PlanStep,
    ProjectStructure,
    QualityIssue,
    QualityReport,
    RequirementItem,
    SourceUnit,
    SrsDocument,
    StubBody,
    TestCase,
    TestPlan,
    TestReport,
    Trace,
    TraceabilityMatrix,
    TraceLink,
    TraceRow,
)
from appforge.orchestrator import RunState
from appforge.scenario import Expectations, Scenario
from appforge.toolchain import ToolchainConfig

text = st.text(max_size=12)
name = st.text(alphabet="abcdefghijklmnopqrstuvwxyzABCDEFGHIJ_0123456789", min_size=1, max_size=8)
small = st.integers(min_value=0, max_value=50)
finite = st.floats(allow_nan=False, allow_infinity=False, width=64)
number = st.one_of(st.integers(-10**6, 10**6), finite)
json_value = st.recursive(
    st.none() | st.booleans() | st.integers(-10**6, 10**6) | finite | text,
    lambda inner: st.lists(inner, max_size=3) | st.dictionaries(name, inner, max_size=3),
    max_leaves=6,
)
json_obj = st.dictionaries(name, json_value, max_size=3)


def tuples(strategy, max_size: int = 3):
    return st.lists(strategy, max_size=max_size).map(tuple)


def unique_by(strategy, key, max_size: int = 3):
    return st.lists(strategy, max_size=max_size, unique_by=key).map(tuple)


@st.composite
def param_specs(draw):
    rng = draw(st.none() | st.tuples(number, number).map(lambda t: tuple(sorted(t))))
    return ParamSpec(name=draw(name), semantic_type=draw(name), numeric_range=rng,
                     invalid_classes=draw(tuples(text)))


@st.composite
def method_contracts(draw):
    params = draw(unique_by(param_specs(), lambda p: p.name))
    return MethodContract(signature=draw(name) + "()", visibility=draw(st.sampled_from(
        ["public", "protected", "private", "package"])), params=params, returns=draw(name),
        exception_conditions=draw(tuples(text)), nondeterministic=draw(st.booleans()))


contracts = unique_by(method_contracts(), lambda c: c.signature)
requirement_items = st.builds(RequirementItem, id=name, kind=st.sampled_from(
    ["functional", "user-story", "acceptance-criterion"]), text=text, constraints=tuples(text), source_ref=text)
arch_elements = st.builds(ArchElement, module_id=name, responsibilities=text, contracts=contracts,
                          patterns=tuples(text), tech_constraints=tuples(text), depends_on=tuples(name))
trace_links = st.builds(TraceLink, requirement_id=name, module_id=name, method_signature=name)
srs_documents = st.builds(SrsDocument, project=text,
                          requirements=unique_by(requirement_items, lambda r: r.id),
                          trace_links=tuples(trace_links))
add_documents = st.builds(AddDocument, project=text, elements=unique_by(arch_elements, lambda e: e.module_id))
plan_steps = st.builds(PlanStep, module_id=name, rationale=text, contracts=contracts, tech_constraints=tuples(text))
package_nodes = st.recursive(
    st.builds(PackageNode, name=name, modules=tuples(name)),
    lambda inner: st.builds(PackageNode, name=name, modules=tuples(name), children=tuples(inner, 2)),
    max_leaves=4,
)
visibility = st.sampled_from(["public", "protected", "private", "package"])
arrangement_rules = st.builds(ArrangementRules, inheritance=tuples(st.tuples(name, name)),
                              visibility=st.dictionaries(name, tuples(visibility), max_size=2))
code_plans = st.builds(CodePlan, version=small, steps=tuples(plan_steps), dep_graph=st.dictionaries(
    name, tuples(name), max_size=3), packages=package_nodes, arrangement_rules=arrangement_rules,
    ambiguities=tuples(text))
dir_entries = st.builds(DirEntry, path=text, role=st.sampled_from(["source", "tests", "resources"]),
                        modules=tuples(name))
project_structures = st.builds(ProjectStructure, directories=tuples(dir_entries),
                               entry_points=st.dictionaries(name, text, max_size=2),
                               dep_config=st.dictionaries(name, text, max_size=2))
api_entries = st.builds(ApiEntry, library_name=name, version_constraint=name, elements_used=tuples(text),
                        purpose=text)
api_manifests = st.builds(ApiManifest, entries=unique_by(api_entries, lambda e: e.library_name))
defect_markers = st.builds(DefectMarker, kind=st.sampled_from(["compile", "init", "logic"]), detail=text,
                           target_signature=st.none() | name)
stub_bodies = st.builds(StubBody, declares=tuples(name), references=tuples(name),
                        defect_markers=tuples(defect_markers))
source_units = st.builds(SourceUnit, path=text, module_id=name, plan_version=small, body=stub_bodies,
                         status=st.sampled_from(["generated", "compiled", "failed"]), debug_attempts=small)
diagnostics = st.builds(Diagnostic, severity=st.sampled_from(["error", "warning"]), error_type=text,
                        location=st.tuples(text, small), message=text, suggested_fix=st.none() | text)
compilation_logs = st.builds(lambda s, ds, n: CompilationLog.from_diagnostics(s, ds, n),
                             text, st.lists(diagnostics, max_size=3), small)
launch_outcomes = st.builds(LaunchOutcome, ok=st.booleans(), module=st.none() | name,
                            unit_path=st.none() | text, detail=text)
quality_reports = st.builds(QualityReport, issues=tuples(st.builds(QualityIssue, module_id=name, message=text)))
traces = st.builds(Trace, requirement_id=name, method_signature=name)
categories = st.sampled_from(["positive", "negative", "boundary", "exception", "property"])
test_cases = st.builds(TestCase, id=name, category=categories, trace=traces, input_values=json_obj,
                       oracle=json_obj, status=st.sampled_from(["pending", "passed", "failed", "regenerated"]))
defects = st.builds(Defect, id=name, severity=st.sampled_from(["blocker", "major", "minor"]), description=text,
                    test_input=json_obj, expected=json_obj, actual=json_obj, trace=traces)
test_reports = st.builds(TestReport, coverage=st.floats(0, 1), case_results=st.dictionaries(
    name, st.sampled_from(["passed", "failed"]), max_size=3), defects=tuples(defects), ordinal=small)
mapping_targets = st.builds(MappingTarget, module_id=name, method_signature=name)
test_plans = st.builds(TestPlan, framework=text, mappings=st.dictionaries(name, tuples(mapping_targets), max_size=2),
                       untestable=st.dictionaries(name, text, max_size=2), scope_notes=tuples(text))
trace_rows = st.builds(TraceRow, requirement_id=name, module_id=name, method_signature=name,
                       test_case_ids=tuples(name))
matrices = st.builds(TraceabilityMatrix, rows=tuples(trace_rows))
origins = st.sampled_from(["compiler", "launch_check", "test_report", "quality_check"])
feedback_events = st.builds(FeedbackEvent, origin=origins, payload_ref=text, subject=name,
                            counters=st.dictionaries(name, small, max_size=2))
improvement_records = st.builds(
    lambda o, t, c, a, b: ImprovementRecord(ordinal=o, trigger=t, changed_units=c,
                                            plan_version_before=a, plan_version_after=a + b),
    small, text, tuples(text), small, small)
budgets = st.builds(Budgets, self_debug=small, plan_revision=small, rectification=small)
states = st.sampled_from(["Planning", "Structuring", "ApiAnalysis", "Generating", "Compiling", "SelfDebugging",
                          "Revising", "Rebuilding", "IntegrationCheck", "Testing", "Rectifying", "Escalated",
                          "Done"])
pipeline_states = st.builds(PipelineState, state=states, module=st.none() | name, reason=st.none() | text,
                            ref=st.none() | text, counters=st.dictionaries(name, small, max_size=2))
directives = st.one_of(
    st.builds(Directive, action=st.sampled_from(["skip", "abort"]), note=text),
    st.builds(Directive, action=st.just("amend"), plan=code_plans, note=text),
    st.builds(Directive, action=st.just("amend"), unit_body=stub_bodies, note=text),
)
audit_items = st.builds(AuditItem, id=name, ordinal=small, status=st.sampled_from(["open", "resolved", "closed"]),
                        reason=text, subject=name, event=st.none() | feedback_events,
                        evidence=st.dictionaries(name, tuples(text), max_size=2), resume_state=pipeline_states,
                        resolution=st.none() | directives)
audit_queues = st.builds(AuditQueue, items=tuples(audit_items, 2))
knowledge_docs = st.builds(KnowledgeDoc, id=name, corpus=st.sampled_from(["srs-add", "coding", "testing"]),
                           pillar=text, keywords=tuples(name), body=text)
contract_changes = st.builds(ContractChange, module_id=name, signature=name,
                             change=st.sampled_from(["added", "removed", "modified"]))
plan_diffs = st.builds(PlanDiff, changed_contracts=tuples(contract_changes), changed_steps=tuples(name),
                       changed_deps=tuples(name), changed_packages=tuples(name), changed_rules=tuples(name),
                       added_modules=tuples(name), removed_modules=tuples(name),
                       package_tree_changed=st.booleans(), ambiguities_changed=st.booleans(),
                       reorder_only=st.booleans())
run_states = st.builds(RunState, run_id=name, state=pipeline_states, budgets=budgets, strict=st.booleans(),
                       plan_version=small, revisions=small, units=st.dictionaries(name, text, max_size=2),
                       gen_queue=tuples(name), compile_attempts=st.dictionaries(name, small, max_size=2),
                       accepted_defects=tuples(name), pending_event=st.none() | text)
fault_specs = st.builds(FaultSpec, module=name, kind=st.sampled_from(["compile", "init", "logic"]),
                        attempts=st.just("all") | tuples(small), detail=text, target_signature=st.none() | name)
rectification_payloads = st.builds(RectificationPayload, units=st.dictionaries(name, stub_bodies, max_size=2),
                                   manifest=st.none() | api_manifests)
toolchain_configs = st.builds(ToolchainConfig, compile_cmd=text, launch_cmd=text, test_cmd=text,
                              timeout_seconds=st.floats(0.1, 100))
analysis_results = st.builds(AnalysisResult, requirements=tuples(requirement_items), elements=tuples(arch_elements),
                             constraints=tuples(text), ambiguities=tuples(text))
expectations = st.builds(Expectations, outcome=st.sampled_from(["Done", "Escalated"]),
                         plan_version=st.none() | small | st.just("P + 1"), coverage=st.none() | st.floats(0, 1),
                         compile_attempts=st.dictionaries(name, small | st.just("(P + 1) * (1 + D)"), max_size=2))
scenarios = st.builds(Scenario, name=name, srs=text, add=text, knowledge_pack=st.none() | text,
                      fixtures=tuples(text), fault_schedule=tuples(fault_specs, 2), budgets=budgets,
                      expectations=expectations)

ALL = {
    "RequirementItem": requirement_items, "ParamSpec": param_specs(), "MethodContract": method_contracts(),
    "ArchElement": arch_elements, "TraceLink": trace_links, "SrsDocument": srs_documents,
    "AddDocument": add_documents, "PlanStep": plan_steps, "PackageNode": package_nodes,
    "ArrangementRules": arrangement_rules, "CodePlan": code_plans, "DirEntry": dir_entries,
    "ProjectStructure": project_structures, "ApiEntry": api_entries, "ApiManifest": api_manifests,
    "DefectMarker": defect_markers, "StubBody": stub_bodies, "SourceUnit": source_units,
    "Diagnostic": diagnostics, "CompilationLog": compilation_logs, "LaunchOutcome": launch_outcomes,
    "QualityReport": quality_reports, "Trace": traces, "TestCase": test_cases, "Defect": defects,
    "TestReport": test_reports, "MappingTarget": mapping_targets, "TestPlan": test_plans,
    "TraceRow": trace_rows, "TraceabilityMatrix": matrices, "FeedbackEvent": feedback_events,
    "ImprovementRecord": improvement_records, "Budgets": budgets, "PipelineState": pipeline_states,
    "Directive": directives, "AuditItem": audit_items, "AuditQueue": audit_queues,
    "KnowledgeDoc": knowledge_docs, "ContractChange": contract_changes, "PlanDiff": plan_diffs,
    "RunState": run_states, "FaultSpec": fault_specs, "RectificationPayload": rectification_payloads,
    "ToolchainConfig": toolchain_configs, "AnalysisResult": analysis_results, "Expectations": expectations,
    "Scenario": scenarios,
}
