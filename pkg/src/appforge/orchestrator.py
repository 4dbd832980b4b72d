"""Closed-loop state machine driving the planning, coding and testing agents.

Each ``PipelineState`` in the trace is a state that was entered and executed;
the handler for a state returns the next state. Feedback from the compiler,
launch check, quality check and test report is routed under ``Budgets``;
budget exhaustion appends ``AuditItem`` entries and halts in ``Escalated``.
"""

from __future__ import annotations

import hashlib
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Literal, Optional

from appforge import ca, copa, ta
from appforge.backends import Backend, summarize_context
from appforge.errors import (
    AppForgeError,
    NoFixtureError,
    NotFoundError,
    UnknownRunError,
    UnresolvedItemError,
)
from appforge.kb import KnowledgeBase
from appforge.model import (
    ApiManifest,
    Artifact,
    AuditItem,
    AuditQueue,
    Budgets,
    CodePlan,
    CompilationLog,
    Directive,
    FeedbackEvent,
    ImprovementRecord,
    LaunchOutcome,
    PipelineState,
    ProjectStructure,
    QualityIssue,
    QualityReport,
    SourceUnit,
    TestCase,
    TestReport,
    TraceabilityMatrix,
    conflict_set,
    plan_diff,
    topo_order,
)
from appforge.toolchain import Toolchain
from appforge.workspace import Workspace

Decision = Literal["SelfDebug", "PlanRevision", "Rectify", "Escalate"]

RUN_STATE = "artifacts/run-state.json"
STATE_TRACE = "artifacts/state-trace.json"
OUTCOME = "artifacts/outcome.json"

TERMINAL = frozenset({"Done", "Escalated"})
EDGES: dict[str, frozenset[str]] = {
    "Planning": frozenset({"Structuring"}),
    "Structuring": frozenset({"ApiAnalysis"}),
    "ApiAnalysis": frozenset({"Generating", "IntegrationCheck"}),
    "Generating": frozenset({"Compiling"}),
    "Compiling": frozenset({"Generating", "Compiling", "IntegrationCheck", "SelfDebugging", "Revising"}),
    "SelfDebugging": frozenset({"Compiling"}),
    "Revising": frozenset({"Rebuilding"}),
    "Rebuilding": frozenset({"Generating", "Compiling", "IntegrationCheck"}),
    "IntegrationCheck": frozenset({"Testing", "SelfDebugging", "Revising", "Rectifying"}),
    "Testing": frozenset({"Done", "Rectifying"}),
    "Rectifying": frozenset({"Compiling", "IntegrationCheck"}),
    "Escalated": frozenset({"Rebuilding", "Compiling", "Testing", "Escalated"}),
    "Done": frozenset(),
}


def allowed(src: str, dst: str) -> bool:
    """Every non-terminal state may also escalate."""
    return dst in EDGES[src] or (dst == "Escalated" and src not in TERMINAL)


def route_feedback(event: FeedbackEvent, counters: Mapping[str, int], budgets: Budgets) -> Decision:
    """Budget-ordered routing: cheapest repair first.

    ``counters`` holds ``attempts`` and ``revisions`` for build feedback and
    ``defect`` for test and quality feedback.
    """
    if event.origin in ("compiler", "launch_check"):
        if counters.get("attempts", 0) < budgets.self_debug:
            return "SelfDebug"
        if counters.get("revisions", 0) < budgets.plan_revision:
            return "PlanRevision"
        return "Escalate"
    return "Rectify" if counters.get("defect", 0) < budgets.rectification else "Escalate"


def incremental_rebuild_set(old_plan: CodePlan, new_plan: CodePlan,
                            units: Mapping[str, SourceUnit]) -> tuple[set[str], set[str]]:
    """(reuse, regenerate) over the modules of ``new_plan``.

    Regenerate is the conflict set plus planned modules that have no unit yet.
    """
    conflicts = conflict_set(plan_diff(old_plan, new_plan), new_plan.dep_graph)
    planned = set(new_plan.module_ids)
    regenerate = (conflicts | (planned - set(units))) & planned
    return planned - regenerate, regenerate


class RunState(Artifact):
    """Everything needed to continue a run; persisted after every run or resume."""

    run_id: str
    state: PipelineState
    budgets: Budgets = Budgets()
    strict: bool = False
    plan_version: int = 0
    revisions: int = 0
    rectification_rounds: int = 0
    units: dict[str, str] = {}
    gen_queue: tuple[str, ...] = ()
    compile_queue: tuple[str, ...] = ()
    compile_attempts: dict[str, int] = {}
    defect_counters: dict[str, int] = {}
    accepted_defects: tuple[str, ...] = ()
    pending_event: Optional[str] = None
    pending_defects: tuple[str, ...] = ()
    pending_modules: tuple[str, ...] = ()
    tested_plan_version: int = 0
    last_report: Optional[str] = None
    reused: int = 0
    regenerated: int = 0
    feedback: dict[str, int] = {}
    aborted: bool = False


@dataclass
class RunOutcome:
    status: Literal["Done", "Escalated"]
    run_id: str
    plan_version: int
    report: Optional[TestReport] = None
    audit_items: list[AuditItem] = field(default_factory=list)
    reason: Optional[str] = None


def run_id_for(workspace: Workspace) -> str:
    digest = hashlib.sha256()
    for name in ("inputs/srs.json", "inputs/add.json"):
        digest.update(workspace.path(name).read_bytes())
    return "run-" + digest.hexdigest()[:12]


class Orchestrator:
    def __init__(
        self,
        workspace: Workspace,
        backend: Backend,
        toolchain: Toolchain,
        kb: Optional[KnowledgeBase] = None,
        budgets: Budgets = Budgets(),
        strict: bool = False,
    ) -> None:
        self.ws = workspace
        self.backend = backend
        self.toolchain = toolchain
        self.kb = kb
        self.budgets = budgets
        self.strict = strict
        self.rs: Optional[RunState] = None
        self.trace: list[PipelineState] = []

    # -- public entry points -------------------------------------------------

    def run(self) -> RunOutcome:
        with self.ws.lock():
            self.rs = RunState(run_id=run_id_for(self.ws), state=PipelineState(state="Planning"),
                               budgets=self.budgets, strict=self.strict)
            self.trace = [self._snapshot(self.rs.state)]
            return self._loop()

    def resume(self, run_id: Optional[str] = None, resolution: Optional[Directive] = None,
               item_id: Optional[str] = None) -> RunOutcome:
        """Apply recorded (or given) resolutions and continue from the audit item's state."""
        with self.ws.lock():
            rs = load_run_state(self.ws)
            if run_id is not None and run_id != rs.run_id:
                raise UnknownRunError(f"unknown run {run_id}; this workspace holds {rs.run_id}")
            if rs.state.state != "Escalated" or rs.aborted:
                raise UnknownRunError(f"run {rs.run_id} is {rs.state.label}; nothing to resume")
            self.rs = rs
            self.budgets, self.strict = rs.budgets, rs.strict
            self.trace = [PipelineState.parse(s) for s in self.ws.read_json(STATE_TRACE)]
            queue = self.ws.audit_queue()
            if resolution is not None:
                queue = record_resolution(queue, resolution, item_id)
            pending = [i for i in queue.items if i.status != "closed"]
            unresolved = [i.id for i in pending if i.status == "open"]
            if not pending:
                raise UnresolvedItemError("no audit item awaits resolution")
            if unresolved:
                raise UnresolvedItemError("unresolved audit items: " + ", ".join(unresolved))
            nxt = self._apply_resolutions(pending)
            closed = {i.id for i in pending}
            self.ws.save_audit_queue(AuditQueue(items=tuple(
                i.model_copy(update={"status": "closed"}) if i.id in closed else i for i in queue.items
            )))
            self._transition(nxt)
            return self._loop()

    # -- machinery -----------------------------------------------------------

    def _snapshot(self, state: PipelineState) -> PipelineState:
        rs = self.rs
        return state.model_copy(update={"counters": {
            "plan_version": rs.plan_version,
            "revisions": rs.revisions,
            "rectification_rounds": rs.rectification_rounds,
        }})

    def _transition(self, nxt: PipelineState, produced: Optional[str] = None) -> None:
        current = self.rs.state
        if not allowed(current.state, nxt.state):
            raise AssertionError(f"illegal transition {current.label} -> {nxt.label}")
        if produced is not None and self.trace:
            self.trace[-1] = self.trace[-1].model_copy(update={"ref": produced})
        self.rs = self.rs.model_copy(update={"state": self._snapshot(nxt)})
        self.trace.append(self.rs.state)

    def _loop(self) -> RunOutcome:
        while self.rs.state.state not in TERMINAL:
            try:
                nxt, produced = self._step()
            except AppForgeError as exc:
                nxt, produced = self._escalate_internal(exc), None
            self._transition(nxt, produced)
        return self._finish()

    def _update(self, **changes) -> None:
        self.rs = self.rs.model_copy(update=changes)

    def _step(self) -> tuple[PipelineState, Optional[str]]:
        state = self.rs.state
        handler = getattr(self, "_do_" + state.state)
        return handler(state)

    # -- loading helpers -----------------------------------------------------

    def _plan(self, version: Optional[int] = None) -> CodePlan:
        return self.ws.load("plan", version or self.rs.plan_version)

    def _structure(self) -> ProjectStructure:
        return self.ws.load("structure")

    def _manifest(self) -> ApiManifest:
        return self.ws.load("manifest")

    def _units(self) -> dict[str, SourceUnit]:
        return {m: self.ws.load_unit(p) for m, p in sorted(self.rs.units.items())}

    def _save_unit(self, unit: SourceUnit) -> str:
        ref = self.ws.persist(unit)
        self._update(units={**self.rs.units, unit.module_id: ref})
        return ref

    def _next_work(self, produced: Optional[str]) -> tuple[PipelineState, Optional[str]]:
        if self.rs.gen_queue:
            m, rest = self.rs.gen_queue[0], self.rs.gen_queue[1:]
            self._update(gen_queue=rest)
            return PipelineState(state="Generating", module=m), produced
        if self.rs.compile_queue:
            m, rest = self.rs.compile_queue[0], self.rs.compile_queue[1:]
            self._update(compile_queue=rest)
            return PipelineState(state="Compiling", module=m), produced
        return PipelineState(state="IntegrationCheck"), produced

    def _emit(self, origin: str, payload_ref: str, subject: str, counters: dict[str, int]) -> tuple[FeedbackEvent, str]:
        event = FeedbackEvent(origin=origin, payload_ref=payload_ref, subject=subject, counters=counters)
        ref = self.ws.persist(event)
        feedback = dict(self.rs.feedback)
        feedback[origin] = feedback.get(origin, 0) + 1
        self._update(feedback=feedback)
        return event, ref

    # -- state handlers ------------------------------------------------------

    def _do_Planning(self, state):
        analysis = copa.analyze_documents(self.ws.srs(), self.ws.add())
        self.ws.write_text("artifacts/analysis.json", analysis.dumps())
        plan = copa.generate_plan(analysis, self.kb, self.backend)
        ref = self.ws.persist(plan)
        self._update(plan_version=plan.version)
        return PipelineState(state="Structuring"), ref

    def _do_Structuring(self, state):
        ref = self.ws.persist(copa.generate_structure(self._plan()))
        return PipelineState(state="ApiAnalysis"), ref

    def _do_ApiAnalysis(self, state):
        plan = self._plan()
        ref = self.ws.persist(ca.analyze_apis(plan, self.kb, self.backend))
        self._update(gen_queue=tuple(topo_order(plan.dep_graph)))
        return self._next_work(ref)

    def _do_Generating(self, state):
        plan = self._plan()
        unit = ca.generate_unit(plan.step(state.module), plan, self._structure(), self._manifest(),
                                self.backend, self._units(), self.kb)
        return PipelineState(state="Compiling", module=state.module), self._save_unit(unit)

    def _do_Compiling(self, state):
        m = state.module
        units = self._units()
        log, unit = ca.compile_unit(units[m], self.toolchain, units, self.ws.next_ordinal("compile"))
        log_ref = self.ws.persist(log)
        self._save_unit(unit)
        attempts = dict(self.rs.compile_attempts)
        attempts[m] = attempts.get(m, 0) + 1
        self._update(compile_attempts=attempts)
        if log.outcome == "success":
            return self._next_work(log_ref)
        return self._route_build("compiler", log_ref, unit, state), log_ref

    def _route_build(self, origin: str, payload_ref: str, unit: SourceUnit,
                     resume_state: PipelineState) -> PipelineState:
        counters = {"attempts": unit.debug_attempts, "revisions": self.rs.revisions}
        event, ref = self._emit(origin, payload_ref, unit.module_id, counters)
        decision = route_feedback(event, counters, self.budgets)
        if decision == "SelfDebug":
            self._update(pending_event=ref)
            return PipelineState(state="SelfDebugging", module=unit.module_id)
        if decision == "PlanRevision":
            self._update(pending_event=ref)
            return PipelineState(state="Revising")
        item = self.escalate(event, ref, f"{origin} budget exhausted for {unit.module_id}", resume_state)
        return PipelineState(state="Escalated", reason=item.reason)

    def _failure_of(self, event: FeedbackEvent) -> list[str]:
        if event.origin == "launch_check":
            return ca.failure_messages(launch=self.ws.load("launch", _ordinal(event.payload_ref)))
        return ca.failure_messages(log=self.ws.load("compile", _ordinal(event.payload_ref)))

    def _do_SelfDebugging(self, state):
        event = FeedbackEvent.loads(self.ws.read_text(self.rs.pending_event))
        unit = self._units()[state.module]
        fixed = ca.self_debug(unit, self._failure_of(event), self.backend, self.budgets.self_debug, self._plan())
        return PipelineState(state="Compiling", module=state.module), self._save_unit(fixed)

    def _do_Revising(self, state):
        event = FeedbackEvent.loads(self.ws.read_text(self.rs.pending_event))
        revised = copa.revise_plan(self._plan(), event, self.ws.srs(), self.ws.add(), self.kb,
                                   self.backend, self._failure_of(event))
        ref = self.ws.persist(revised)
        self._update(plan_version=revised.version, revisions=self.rs.revisions + 1)
        return PipelineState(state="Rebuilding"), ref

    def _do_Rebuilding(self, state):
        new = self._plan()
        old = self._plan(new.version - 1)
        structure = copa.generate_structure(new)
        self.ws.persist(structure)
        units = {m: u for m, u in self._units().items() if m in new.module_ids}
        reuse, regenerate = incremental_rebuild_set(old, new, units)
        broken = {m for m in reuse if units[m].status != "compiled"}
        reuse, regenerate = reuse - broken, regenerate | broken
        self._update(
            units={m: p for m, p in self.rs.units.items() if m in reuse},
            gen_queue=tuple(m for m in topo_order(new.dep_graph) if m in regenerate),
            compile_queue=(),
            reused=self.rs.reused + len(reuse),
            regenerated=self.rs.regenerated + len(regenerate),
        )
        if regenerate and self.rs.pending_event:
            self.ws.record_improvement(ImprovementRecord(
                ordinal=0, trigger=self.rs.pending_event,
                changed_units=tuple(sorted(structure.unit_path(m) for m in regenerate)),
                plan_version_before=old.version, plan_version_after=new.version,
            ))
        return self._next_work(None)

    def _do_IntegrationCheck(self, state):
        units = self._units()
        log, launch = ca.integration_build(list(units.values()), self.toolchain, self.ws.next_ordinal("compile"))
        log_ref = self.ws.persist(log)
        if log.outcome == "failure":
            by_path = {u.path: m for m, u in units.items()}
            located = [by_path[d.location[0]] for d in log.diagnostics
                       if d.severity == "error" and d.location[0] in by_path]
            subject = located[0] if located else next(iter(topo_order(self._plan().dep_graph)))
            unit = units[subject].model_copy(update={"status": "failed"})
            self._save_unit(unit)
            return self._route_build("compiler", log_ref, unit, PipelineState(state="IntegrationCheck")), log_ref
        if not launch.ok:
            launch_ref = self.ws.persist(launch, self.ws.next_ordinal("launch"))
            subject = launch.module if launch.module in units else next(iter(topo_order(self._plan().dep_graph)))
            unit = units[subject].model_copy(update={"status": "failed"})
            self._save_unit(unit)
            return self._route_build("launch_check", launch_ref, unit,
                                     PipelineState(state="IntegrationCheck")), launch_ref
        issues = ca.quality_check(units, self._plan())
        if not issues:
            return PipelineState(state="Testing"), log_ref
        quality_ref = self.ws.persist(QualityReport(issues=tuple(
            QualityIssue(module_id=m, message=msg) for m, msg in issues)), self.ws.next_ordinal("quality"))
        modules, exhausted, first = [], [], None
        for module in sorted({m for m, _ in issues}):
            counters = {"defect": self.rs.defect_counters.get(f"quality:{module}", 0)}
            event, ref = self._emit("quality_check", quality_ref, module, counters)
            first = first or ref
            if route_feedback(event, counters, self.budgets) == "Rectify":
                modules.append(module)
            else:
                exhausted.append((event, ref, module))
        if exhausted:
            for event, ref, module in exhausted:
                self.escalate(event, ref, f"quality budget exhausted for {module}",
                              PipelineState(state="IntegrationCheck"))
            return PipelineState(state="Escalated", reason="quality budget exhausted"), quality_ref
        self._update(pending_event=first, pending_modules=tuple(modules), pending_defects=())
        return PipelineState(state="Rectifying"), quality_ref

    def _cases(self, plan: CodePlan, test_plan) -> tuple[list[TestCase], TraceabilityMatrix]:
        tested = self.rs.tested_plan_version
        if not tested or tested == plan.version or not self.ws.exists("artifacts/trace-matrix.json"):
            return ta.build_cases(test_plan, plan)
        signatures: set[str] = set()
        for v in range(tested, plan.version):
            diff = plan_diff(self._plan(v), self._plan(v + 1))
            signatures |= {c.signature for c in diff.changed_contracts}
        matrix = self.ws.load("trace-matrix")
        previous = [TestCase.parse(c) for m in sorted(self.rs.units)
                    if self.ws.exists(f"tests/{m}/cases.json")
                    for c in self.ws.read_json(f"tests/{m}/cases.json")]
        return ta.rederive(previous, ta.regenerate_affected(matrix, (), signatures), test_plan, plan)

    def _do_Testing(self, state):
        plan = self._plan()
        units = self._units()
        test_plan = ta.generate_test_plan(self.ws.srs(), plan, units, self.kb, self.strict)
        self.ws.persist(test_plan)
        cases, matrix = self._cases(plan, test_plan)
        by_module: dict[str, list] = {}
        for c in cases:
            by_module.setdefault(c.module_id, []).append(c.to_dict())
        for m, rows in sorted(by_module.items()):
            self.ws.write_json(f"tests/{m}/cases.json", rows)
        self.ws.persist(matrix)
        open_defects = ()
        if self.rs.last_report:
            open_defects = self.ws.load("report", _ordinal(self.rs.last_report)).defects
        report, _ = ta.execute_and_report(cases, list(units.values()), self.toolchain, plan,
                                          self.ws.next_ordinal("report"), open_defects)
        report_ref = self.ws.persist(report)
        self._update(last_report=report_ref, tested_plan_version=plan.version)
        outstanding = [d for d in report.defects if d.id not in self.rs.accepted_defects]
        if not outstanding:
            return PipelineState(state="Done"), report_ref
        exhausted, first = [], None
        for d in outstanding:
            counters = {"defect": self.rs.defect_counters.get(d.id, 0)}
            event, ref = self._emit("test_report", report_ref, d.id, counters)
            first = first or ref
            if route_feedback(event, counters, self.budgets) == "Escalate":
                exhausted.append((event, ref, d.id))
        if exhausted:
            for event, ref, defect_id in exhausted:
                self.escalate(event, ref, f"rectification budget exhausted for {defect_id}",
                              PipelineState(state="Testing"))
            return PipelineState(state="Escalated", reason="rectification budget exhausted"), report_ref
        self._update(pending_event=first, pending_defects=tuple(d.id for d in outstanding), pending_modules=())
        return PipelineState(state="Rectifying"), report_ref

    def _do_Rectifying(self, state):
        plan = self._plan()
        units = self._units()
        defects = []
        if self.rs.pending_defects:
            report = self.ws.load("report", _ordinal(self.rs.last_report))
            defects = [d for d in report.defects if d.id in self.rs.pending_defects]
        counters = dict(self.rs.defect_counters)
        result = ca.rectify(units, defects, plan, self._manifest(), self.backend,
                            counters=counters, budget=self.budgets.rectification,
                            trigger=self.rs.pending_event, modules=self.rs.pending_modules)
        for key in [d.id for d in defects] + [f"quality:{m}" for m in self.rs.pending_modules]:
            counters[key] = counters.get(key, 0) + 1
        self._update(defect_counters=counters, rectification_rounds=self.rs.rectification_rounds + 1,
                     pending_defects=(), pending_modules=())
        for unit in result.changed.values():
            self._save_unit(unit)
        if result.manifest is not None:
            self.ws.persist(result.manifest)
        if result.record is not None:
            self.ws.record_improvement(result.record)
        self._update(compile_queue=tuple(m for m in topo_order(plan.dep_graph) if m in result.changed))
        return self._next_work(None)

    # -- escalation ----------------------------------------------------------

    def _evidence(self, subject: str, extra: Mapping[str, tuple[str, ...]] = ()) -> dict[str, tuple[str, ...]]:
        plans = tuple(self.ws.ref("plan", v) for v in self.ws.ordinals("plan"))
        evidence: dict[str, tuple[str, ...]] = {"plans": plans}
        unit_path = self.rs.units.get(subject)
        if unit_path is not None:
            logs = []
            for n in self.ws.ordinals("compile"):
                log: CompilationLog = self.ws.load("compile", n)
                if log.scope == unit_path or any(d.location[0] == unit_path for d in log.diagnostics):
                    logs.append(self.ws.ref("compile", n))
            evidence["logs"] = tuple(logs)
            evidence["launches"] = tuple(
                self.ws.ref("launch", n) for n in self.ws.ordinals("launch")
                if self.ws.load("launch", n).module == subject)
        if subject.startswith("DEF::"):
            evidence["reports"] = tuple(
                self.ws.ref("report", n) for n in self.ws.ordinals("report")
                if any(d.id == subject for d in self.ws.load("report", n).defects))
        evidence["feedback"] = tuple(
            self.ws.ref("feedback", n) for n in self.ws.ordinals("feedback")
            if self.ws.load("feedback", n).subject == subject)
        evidence.update(dict(extra))
        return evidence

    def escalate(self, event: Optional[FeedbackEvent], event_ref: Optional[str], reason: str,
                 resume_state: PipelineState, subject: Optional[str] = None,
                 extra: Mapping[str, tuple[str, ...]] = ()) -> AuditItem:
        """Append an open audit item carrying the event and its full evidence bundle."""
        subject = subject or (event.subject if event else "run")
        queue = self.ws.audit_queue()
        n = len(queue.items) + 1
        evidence = self._evidence(subject, extra)
        if event_ref:
            evidence["event"] = (event_ref,)
        item = AuditItem(id=f"AUD-{n}", ordinal=n, reason=reason, subject=subject, event=event,
                         evidence=evidence, resume_state=resume_state)
        self.ws.save_audit_queue(AuditQueue(items=queue.items + (item,)))
        return item

    def _escalate_internal(self, exc: AppForgeError) -> PipelineState:
        state = self.rs.state
        extra: dict[str, tuple[str, ...]] = {}
        if isinstance(exc, NoFixtureError):
            extra["missing_fixture"] = (exc.kind, exc.fingerprint, summarize_context(exc.context))
        reason = f"internal: {type(exc).__name__}: {exc}"
        self.escalate(None, None, reason, state, subject=state.module or "run", extra=extra)
        return PipelineState(state="Escalated", reason=reason)

    # -- resume --------------------------------------------------------------

    def _apply_resolutions(self, items: list[AuditItem]) -> PipelineState:
        order = ["Rebuilding", "Compiling", "Testing"]
        targets: list[PipelineState] = []
        for item in sorted(items, key=lambda i: i.ordinal):
            directive = item.resolution
            if directive.action == "abort":
                self._update(aborted=True)
                return PipelineState(state="Escalated", reason="aborted by auditor")
            targets.append(self._apply(item, directive))
        return min(targets, key=lambda s: order.index(s.state))

    def _apply(self, item: AuditItem, directive: Directive) -> PipelineState:
        subject = item.subject
        counters = {k: v for k, v in self.rs.defect_counters.items() if k not in (subject, f"quality:{subject}")}
        self._update(defect_counters=counters)
        if directive.action == "skip":
            if not subject.startswith("DEF::"):
                raise UnresolvedItemError(f"{item.id}: skip applies only to test defects, not {subject}")
            self._update(accepted_defects=tuple(sorted(set(self.rs.accepted_defects) | {subject})))
            return PipelineState(state="Testing")
        if directive.plan is not None:
            current = self._plan()
            amended = copa.normalize_plan(directive.plan, self.ws.add().elements, current.version + 1)
            trigger = self.ws.write_json(f"audit/{item.id}-resolution.json", directive.to_dict())
            self.ws.persist(amended)
            self._update(plan_version=amended.version, pending_event=trigger)
            return PipelineState(state="Rebuilding")
        module = subject.split("::")[1] if subject.startswith("DEF::") else subject
        if module not in self.rs.units:
            raise UnresolvedItemError(f"{item.id}: no unit for {module} to amend")
        unit = self.ws.load_unit(self.rs.units[module]).model_copy(update={
            "body": directive.unit_body, "status": "generated", "debug_attempts": 0,
        })
        self._save_unit(unit)
        attempts = {k: v for k, v in self.rs.compile_attempts.items() if k != module}
        self._update(compile_attempts=attempts)
        return PipelineState(state="Compiling", module=module)

    # -- completion ----------------------------------------------------------

    def _finish(self) -> RunOutcome:
        rs = self.rs
        self.ws.write_json(STATE_TRACE, [s.to_dict() for s in self.trace])
        self.ws.write_text(RUN_STATE, rs.dumps())
        report = self.ws.load("report", _ordinal(rs.last_report)) if rs.last_report else None
        open_items = [i for i in self.ws.audit_queue().items if i.status != "closed"]
        status = rs.state.state
        summary = {
            "run_id": rs.run_id,
            "status": status,
            "reason": rs.state.reason,
            "plan_version": rs.plan_version,
            "final_report": rs.last_report,
            "accepted_defects": list(rs.accepted_defects),
            "improvement_records": len(self.ws.improvements()),
            "audit_items": [i.id for i in open_items],
        }
        self.ws.write_json(OUTCOME, summary)
        return RunOutcome(status=status, run_id=rs.run_id, plan_version=rs.plan_version,
                          report=report, audit_items=open_items if status == "Escalated" else [],
                          reason=rs.state.reason)


def _ordinal(ref: str) -> int:
    return int(ref.rsplit("-", 1)[1].split(".")[0])


def record_resolution(queue: AuditQueue, directive: Directive, item_id: Optional[str] = None) -> AuditQueue:
    """Attach ``directive`` to ``item_id`` (or the first open item) and mark it resolved."""
    open_items = [i for i in queue.items if i.status == "open"]
    if item_id is None:
        if not open_items:
            raise UnresolvedItemError("no open audit item to resolve")
        item_id = open_items[0].id
    if not any(i.id == item_id for i in queue.items):
        raise UnresolvedItemError(f"no audit item {item_id}")
    return AuditQueue(items=tuple(
        i.model_copy(update={"status": "resolved", "resolution": directive})
        if i.id == item_id and i.status != "closed" else i
        for i in queue.items
    ))


def load_run_state(workspace: Workspace) -> RunState:
    try:
        return RunState.loads(workspace.read_text(RUN_STATE))
    except NotFoundError:
        raise UnknownRunError("workspace has no recorded run") from None
