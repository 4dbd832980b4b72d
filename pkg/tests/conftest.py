from __future__ import annotations

from pathlib import Path

import pytest

from appforge.backends import RecordingBackend
from appforge.ca import analyze_apis, compile_unit, generate_unit
from appforge.copa import analyze_documents, generate_plan, generate_structure
from appforge.kb import KnowledgeBase
from appforge.model import AddDocument, SrsDocument
from appforge.toolchain import StubToolchain
from scenarios.build import responder

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"
TANK_INPUTS = SCENARIOS / "tank_inputs"


@pytest.fixture(scope="session")
def tank_srs() -> SrsDocument:
    return SrsDocument.loads((TANK_INPUTS / "srs.json").read_text())


@pytest.fixture(scope="session")
def tank_add() -> AddDocument:
    return AddDocument.loads((TANK_INPUTS / "add.json").read_text())


@pytest.fixture(scope="session")
def tank_kb() -> KnowledgeBase:
    return KnowledgeBase.load_pack(TANK_INPUTS / "knowledge")


@pytest.fixture(scope="session")
def golden() -> Path:
    return SCENARIOS / "tank_battle"


@pytest.fixture(scope="session")
def all_clean() -> Path:
    return SCENARIOS / "all_clean"


@pytest.fixture(scope="session")
def permanent_failure() -> Path:
    return SCENARIOS / "permanent_failure"


@pytest.fixture
def env(tank_srs, tank_add, tank_kb):
    """Plan, structure, manifest and backend for the defective tank project."""
    backend = RecordingBackend(responder(True))
    plan = generate_plan(analyze_documents(tank_srs, tank_add), tank_kb, backend)
    return plan, generate_structure(plan), analyze_apis(plan, tank_kb, backend), backend


def build_all(env) -> dict:
    """Generate and compile every planned module in order."""
    plan, structure, manifest, backend = env
    units = {}
    for i, m in enumerate(plan.module_ids, 1):
        unit = generate_unit(plan.step(m), plan, structure, manifest, backend, units)
        log, units[m] = compile_unit(unit, StubToolchain(), units, i)
        assert log.outcome == "success", log
    return units


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
