from __future__ import annotations

import pytest

from appforge.errors import (
    ConflictError,
    DanglingReferenceError,
    NotEmptyError,
    NotFoundError,
    SchemaError,
    WorkspaceLockedError,
)
from appforge.model import CompilationLog, FeedbackEvent, ImprovementRecord, SourceUnit, StubBody
from appforge.workspace import LAYOUT, Workspace
from tests.conftest import TANK_INPUTS

SRS, ADD = TANK_INPUTS / "srs.json", TANK_INPUTS / "add.json"


@pytest.fixture
def ws(tmp_path):
    return Workspace.init(tmp_path / "ws", SRS, ADD)


class TestInit:
    def test_layout_and_verbatim_inputs(self, ws):
        assert all((ws.root / d).is_dir() for d in LAYOUT)
        assert ws.path("inputs/srs.json").read_bytes() == SRS.read_bytes()

    def test_rejects_bad_documents(self, tmp_path):
        with pytest.raises(SchemaError):
            Workspace.init(tmp_path / "w", '{"project": "x"}', ADD)

    def test_non_empty_root(self, ws):
        with pytest.raises(NotEmptyError):
            Workspace.init(ws.root, SRS, ADD)

    def test_force_archives(self, ws):
        ws.write_text("artifacts/note.txt", "keep me")
        Workspace.init(ws.root, SRS, ADD, force=True)
        assert (ws.root / "archive/1/artifacts/note.txt").read_text() == "keep me"
        assert not ws.exists("artifacts/note.txt")

    def test_open_requires_layout(self, tmp_path):
        with pytest.raises(NotFoundError):
            Workspace.open(tmp_path)


class TestStore:
    def test_ordinals_append_only(self, ws):
        log = CompilationLog.from_diagnostics("x", [], 1)
        assert ws.persist(log) == "artifacts/compile-1.json"
        with pytest.raises(ConflictError):
            ws.persist(log)
        ws.persist(CompilationLog.from_diagnostics("x", [], 2))
        assert ws.load("compile").ordinal == 2
        assert ws.load("compile", 1) == log

    def test_events_take_next_ordinal(self, ws):
        event = FeedbackEvent(origin="compiler", payload_ref="p", subject="s")
        assert [ws.persist(event), ws.persist(event)] == ["artifacts/feedback-1.json", "artifacts/feedback-2.json"]

    def test_units_go_to_their_path(self, ws):
        unit = SourceUnit(path="src/a/A.unit.json", module_id="A", plan_version=1, body=StubBody(),
                          status="generated")
        ws.persist(unit)
        assert ws.load_unit("src/a/A.unit.json") == unit

    def test_missing(self, ws):
        with pytest.raises(NotFoundError):
            ws.load("report")

    def test_improvement_log(self, ws):
        record = ImprovementRecord(ordinal=0, trigger="artifacts/feedback-1.json",
                                   plan_version_before=1, plan_version_after=1)
        with pytest.raises(DanglingReferenceError):
            ws.record_improvement(record)
        ws.persist(FeedbackEvent(origin="compiler", payload_ref="p", subject="s"))
        assert ws.record_improvement(record) == 1
        assert ws.record_improvement(record) == 2
        assert [r.ordinal for r in ws.improvements()] == [1, 2]


class TestLock:
    def test_exclusive(self, ws):
        with ws.lock():
            with pytest.raises(WorkspaceLockedError):
                with ws.lock():
                    pass
            assert ".appforge.lock" not in ws.tree()
        assert not ws.exists(".appforge.lock")
