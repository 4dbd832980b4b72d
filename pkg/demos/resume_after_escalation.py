"""Escalate the tank battle run by denying plan revisions, then resume it.

The first run stops in Escalated with one audit item. An auditor amends the
plan with the initialization fix and the resumed run reaches Done. A second
copy is aborted instead and keeps every artifact it had.
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

from appforge.backends import ScriptedBackend
from appforge.kb import KnowledgeBase
from appforge.model import Budgets, Directive
from appforge.orchestrator import Orchestrator
from appforge.scenario import execute, load_scenario
from appforge.toolchain import StubToolchain

SCENARIO = Path(__file__).resolve().parent.parent / "scenarios" / "tank_battle"
NO_REVISION = Budgets(self_debug=3, plan_revision=0, rectification=3)


def orchestrator_for(ws, loaded) -> Orchestrator:
    backend = ScriptedBackend.from_dir([loaded.resolve(f) for f in loaded.scenario.fixtures])
    kb = KnowledgeBase.load_pack(loaded.resolve(loaded.scenario.knowledge_pack))
    return Orchestrator(ws, backend, StubToolchain(), kb)


def main() -> int:
    loaded = load_scenario(SCENARIO)
    with tempfile.TemporaryDirectory(prefix="appforge-demo-") as tmp:
        root = Path(tmp)
        reference, _ = execute(loaded, root / "reference")
        fixed_plan = reference.load("plan", 2)

        ws, outcome = execute(loaded, root / "amend", NO_REVISION)
        print(f"first run: {outcome.status} ({outcome.reason})")
        for item in outcome.audit_items:
            print(f"  {item.id} subject={item.subject} resume at {item.resume_state.label}")
            print(f"  evidence: {', '.join(f'{k}={len(v)}' for k, v in sorted(item.evidence.items()))}")
        resumed = orchestrator_for(ws, loaded).resume(
            resolution=Directive(action="amend", plan=fixed_plan, note="initialize tankPosition"))
        print(f"after amend: {resumed.status}, plan v{resumed.plan_version}")

        ws, _ = execute(loaded, root / "abort", NO_REVISION)
        files = len(ws.tree())
        aborted = orchestrator_for(ws, loaded).resume(resolution=Directive(action="abort"))
        print(f"after abort: {aborted.status} ({aborted.reason}), files {files} -> {len(ws.tree())}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
