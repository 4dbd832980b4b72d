"""Replay the tank battle scenario and narrate the repair loop state by state.

Run with ``python demos/golden_walkthrough.py [WORKSPACE]``. Without a
workspace argument the run happens in a temporary directory.
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

from appforge.orchestrator import load_run_state
from appforge.scenario import collect_metrics, execute, load_scenario

SCENARIO = Path(__file__).resolve().parent.parent / "scenarios" / "tank_battle"


def narrate(root: Path) -> None:
    ws, outcome = execute(load_scenario(SCENARIO), root)
    print(f"workspace: {ws.root}")
    print("state trace:")
    for n, state in enumerate(ws.read_json("artifacts/state-trace.json"), 1):
        label = state["state"] + (f"({state['module']})" if state.get("module") else "")
        produced = f"  -> {state['ref']}" if state.get("ref") else ""
        print(f"  {n:3} {label}{produced}")

    print("feedback events:")
    for n in ws.ordinals("feedback"):
        event = ws.load("feedback", n)
        print(f"  #{n} {event.origin:12} subject={event.subject}")

    print("improvement records:")
    for record in ws.improvements():
        print(f"  v{record.plan_version_before}->v{record.plan_version_after} "
              f"trigger={record.trigger} changed={', '.join(record.changed_units)}")

    rs = load_run_state(ws)
    metrics = collect_metrics(ws, outcome)
    print(f"outcome: {outcome.status}, plan v{rs.plan_version}, revisions {rs.revisions}, "
          f"rectification rounds {rs.rectification_rounds}")
    print(f"final report: {len(outcome.report.case_results)} cases, {metrics['final_defects']} defects, "
          f"coverage {metrics['coverage']:.2f}, reuse ratio {metrics['reuse_ratio']:.2f}")


def main(argv: list[str]) -> int:
    if argv:
        narrate(Path(argv[0]))
        return 0
    with tempfile.TemporaryDirectory(prefix="appforge-demo-") as tmp:
        narrate(Path(tmp) / "ws")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
