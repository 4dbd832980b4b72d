from __future__ import annotations

from pathlib import Path

import pytest

from appforge.backends import ScriptedBackend
from appforge.errors import UnknownRunError, UnresolvedItemError
from appforge.kb import KnowledgeBase
from appforge.model import Budgets, Directive, FeedbackEvent, PipelineState
from appforge.orchestrator import (
    Orchestrator,
    allowed,
    incremental_rebuild_set,
    load_run_state,
    record_resolution,
    route_feedback,
)
from appforge.scenario import execute, load_scenario
from appforge.toolchain import StubToolchain
from appforge.workspace import Workspace
from tests.test_model import chain_plan

B = Budgets(self_debug=2, plan_revision=1, rectification=1)
ZERO = Budgets(self_debug=0, plan_revision=0, rectification=0)


def run(path: Path, root: Path, budgets: Budgets | None = None):
    return execute(load_scenario(path / "scenario.json"), root, budgets)


def event(origin: str) -> FeedbackEvent:
    return FeedbackEvent(origin=origin, payload_ref="artifacts/x-1.json", subject="M")


def resolve_all(ws: Workspace, directive: Directive) -> None:
    queue = ws.audit_queue()
    for item in queue.items:
        if item.status == "open":
            queue = record_resolution(queue, directive, item.id)
    ws.save_audit_queue(queue)


def resumer(ws: Workspace, scenario_dir: Path) -> Orchestrator:
    """Orchestrator over an existing workspace with the scenario's backend and knowledge."""
    loaded = load_scenario(scenario_dir / "scenario.json")
    backend = ScriptedBackend.from_dir([loaded.resolve(f) for f in loaded.scenario.fixtures])
    kb = KnowledgeBase.load_pack(loaded.resolve(loaded.scenario.knowledge_pack))
    return Orchestrator(ws, backend, StubToolchain(), kb)


def trace_of(ws: Workspace) -> list[PipelineState]:
    return [PipelineState.parse(s) for s in ws.read_json("artifacts/state-trace.json")]


class TestRouting:
    @pytest.mark.parametrize("origin", ["compiler", "launch_check"])
    @pytest.mark.parametrize("attempts,revisions,expected", [
        (0, 0, "SelfDebug"), (1, 1, "SelfDebug"), (2, 0, "PlanRevision"), (2, 1, "Escalate"),
    ])
    def test_build_feedback(self, origin, attempts, revisions, expected):
        assert route_feedback(event(origin), {"attempts": attempts, "revisions": revisions}, B) == expected

    @pytest.mark.parametrize("origin", ["test_report", "quality_check"])
    def test_defect_feedback_never_revises(self, origin):
        assert route_feedback(event(origin), {"defect": 0}, B) == "Rectify"
        assert route_feedback(event(origin), {"defect": 1}, B) == "Escalate"

    def test_zero_budgets_escalate_immediately(self):
        assert route_feedback(event("compiler"), {}, ZERO) == "Escalate"


class TestRebuildSet:
    def test_unchanged_plan_reuses_everything(self):
        units = dict.fromkeys(chain_plan().module_ids)
        assert incremental_rebuild_set(chain_plan(1), chain_plan(2), units) == (set(units), set())

    def test_missing_units_are_regenerated(self):
        reuse, regen = incremental_rebuild_set(chain_plan(1), chain_plan(2), {"model": None})
        assert reuse == {"model"} and regen == {"logic", "util", "view"}


class TestGolden:
    def test_trace_edges_are_legal(self, golden, tmp_path):
        ws, outcome = run(golden, tmp_path / "ws")
        assert outcome.status == "Done"
        trace = trace_of(ws)
        assert trace[0].state == "Planning" and trace[-1].state == "Done"
        assert all(allowed(a.state, b.state) for a, b in zip(trace, trace[1:]))

    def test_deterministic_tree(self, golden, tmp_path):
        a, _ = run(golden, tmp_path / "a")
        b, _ = run(golden, tmp_path / "b")
        assert a.tree() == b.tree()

    def test_clean_run_has_no_feedback(self, all_clean, tmp_path):
        ws, outcome = run(all_clean, tmp_path / "ws")
        assert outcome.status == "Done"
        assert ws.ordinals("feedback") == [] and load_run_state(ws).revisions == 0


class TestEscalation:
    @pytest.mark.parametrize("d,p", [(0, 0), (1, 1), (3, 2)])
    def test_permanent_failure_bound(self, permanent_failure, tmp_path, d, p):
        ws, outcome = run(permanent_failure, tmp_path / "ws", Budgets(self_debug=d, plan_revision=p))
        assert outcome.status == "Escalated"
        assert load_run_state(ws).compile_attempts["Tank"] == (p + 1) * (1 + d)
        (item,) = outcome.audit_items
        assert item.subject == "Tank" and item.resume_state.label == "Compiling(Tank)"

    def test_evidence_is_complete(self, permanent_failure, tmp_path):
        ws, outcome = run(permanent_failure, tmp_path / "ws", Budgets(self_debug=1, plan_revision=1))
        evidence = outcome.audit_items[0].evidence
        assert len(evidence["plans"]) == 2
        assert len(evidence["logs"]) == 4 and len(evidence["feedback"]) == 4
        assert evidence["event"] == (evidence["feedback"][-1],)
        assert all(ws.exists(ref) for refs in evidence.values() for ref in refs)

    def test_zero_rectification_one_item_per_defect(self, golden, tmp_path):
        ws, outcome = run(golden, tmp_path / "ws", Budgets(self_debug=3, plan_revision=2, rectification=0))
        assert outcome.status == "Escalated"
        assert len(outcome.audit_items) == len(outcome.report.defects) == 8
        assert all(i.subject.startswith("DEF::CollisionChecker::") for i in outcome.audit_items)
        assert all(i.evidence["reports"] for i in outcome.audit_items)

    def test_missing_fixture_escalates(self, tmp_path):
        from tests.conftest import TANK_INPUTS
        ws = Workspace.init(tmp_path / "ws", TANK_INPUTS / "srs.json", TANK_INPUTS / "add.json")
        outcome = Orchestrator(ws, ScriptedBackend(), StubToolchain()).run()
        assert outcome.status == "Escalated" and outcome.reason.startswith("internal: NoFixtureError")
        assert outcome.audit_items[0].evidence["missing_fixture"][0] == "plan-proposal"


class TestResume:
    def orchestrator(self, ws):
        return Orchestrator(ws, ScriptedBackend(), StubToolchain())

    def test_amend_plan_reaches_done(self, golden, tmp_path):
        done, _ = run(golden, tmp_path / "done")
        ws, outcome = run(golden, tmp_path / "ws", Budgets(self_debug=3, plan_revision=0, rectification=3))
        assert outcome.status == "Escalated"
        resumed = resumer(ws, golden).resume(
            resolution=Directive(action="amend", plan=done.load("plan", 2)))
        assert resumed.status == "Done" and resumed.plan_version == 2
        assert ws.exists("audit/AUD-1-resolution.json")
        assert all(i.status == "closed" for i in ws.audit_queue().items)

    def test_amend_unit_body(self, all_clean, permanent_failure, tmp_path):
        clean, _ = run(all_clean, tmp_path / "clean")
        body = clean.load_unit(load_run_state(clean).units["Tank"]).body
        ws, _ = run(permanent_failure, tmp_path / "ws", Budgets(self_debug=0, plan_revision=0))
        outcome = resumer(ws, all_clean).resume(
            resolution=Directive(action="amend", unit_body=body))
        assert outcome.status == "Done"
        assert load_run_state(ws).compile_attempts["Tank"] == 1

    def test_skip_accepts_defects(self, golden, tmp_path):
        ws, _ = run(golden, tmp_path / "ws", Budgets(self_debug=3, plan_revision=2, rectification=0))
        resolve_all(ws, Directive(action="skip"))
        outcome = self.orchestrator(ws).resume()
        assert outcome.status == "Done"
        assert len(load_run_state(ws).accepted_defects) == 8

    def test_skip_rejected_for_build_failure(self, permanent_failure, tmp_path):
        ws, _ = run(permanent_failure, tmp_path / "ws", ZERO)
        with pytest.raises(UnresolvedItemError, match="skip"):
            self.orchestrator(ws).resume(resolution=Directive(action="skip"))

    def test_abort_is_final(self, permanent_failure, tmp_path):
        ws, _ = run(permanent_failure, tmp_path / "ws", ZERO)
        before = set(ws.tree())
        outcome = self.orchestrator(ws).resume(resolution=Directive(action="abort"))
        assert outcome.status == "Escalated" and outcome.reason == "aborted by auditor"
        assert before <= set(ws.tree())
        with pytest.raises(UnknownRunError):
            self.orchestrator(ws).resume()

    def test_unresolved_and_unknown(self, permanent_failure, tmp_path):
        ws, outcome = run(permanent_failure, tmp_path / "ws", ZERO)
        with pytest.raises(UnresolvedItemError, match="AUD-1"):
            self.orchestrator(ws).resume()
        with pytest.raises(UnknownRunError):
            self.orchestrator(ws).resume(run_id="run-000000000000")
        from tests.conftest import TANK_INPUTS
        fresh = Workspace.init(tmp_path / "fresh", TANK_INPUTS / "srs.json", TANK_INPUTS / "add.json")
        with pytest.raises(UnknownRunError):
            self.orchestrator(fresh).resume()
