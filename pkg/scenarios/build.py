"""Author the bundled scenarios: inputs, knowledge pack, fixtures and expectations.

Fixtures are recorded by running the pipeline once against a rule-based
responder. Re-running this script reproduces the committed files exactly.

    python scenarios/build.py
"""

from __future__ import annotations

import shutil
import sys
import tempfile
from pathlib import Path
from typing import Any

from appforge.backends import RecordingBackend
from appforge.kb import KnowledgeBase
from appforge.model import (
    AddDocument,
    ApiEntry,
    ApiManifest,
    ArchElement,
    Budgets,
    CodePlan,
    DefectMarker,
    KnowledgeDoc,
    MethodContract,
    PackageNode,
    ParamSpec,
    PlanStep,
    RequirementItem,
    SrsDocument,
    StubBody,
    TraceLink,
    canonical_json,
)
from appforge.orchestrator import Orchestrator
from appforge.toolchain import StubToolchain
from appforge.workspace import Workspace

HERE = Path(__file__).resolve().parent
JAVA = "lang:Java 17"
JAVAFX = "lib:JavaFX Graphics@>=17"
CHECK_COLLISION = "checkCollision(int dx, int dy)"
GET_POSITION = "getTankPosition(int tankId)"
INIT_FIX = "tankPosition must be initialized at construction"
INIT_DEFECT = "uninitialized tankPosition in GameStateData"
DIAGONAL_DEFECT = "boundary: diagonal tank collisions are not detected"

PACKAGES = {"Tank": "model", "GameStateData": "logic", "CollisionChecker": "logic", "GameView": "view"}


def tank_add() -> AddDocument:
    return AddDocument(project="Tank Battle", elements=(
        ArchElement(
            module_id="Tank",
            responsibilities="Tank entity holding health and battlefield position.",
            contracts=(
                MethodContract(signature="getHealth()", returns="int"),
                MethodContract(signature="moveTo(int x, int y)", params=(
                    ParamSpec(name="x", semantic_type="int", numeric_range=(0, 760)),
                    ParamSpec(name="y", semantic_type="int", numeric_range=(0, 560)),
                )),
            ),
            patterns=("entity",),
            tech_constraints=(JAVA,),
        ),
        ArchElement(
            module_id="GameStateData",
            responsibilities="Central game state: tank registry, health bookkeeping and positions.",
            contracts=(
                MethodContract(
                    signature="decreaseHealth(int tankId, int damage)",
                    params=(
                        ParamSpec(name="tankId", semantic_type="int", invalid_classes=("unknown-tank",)),
                        ParamSpec(name="damage", semantic_type="int", numeric_range=(0, 100)),
                    ),
                    exception_conditions=("damage exceeding remaining health",),
                ),
                MethodContract(signature=GET_POSITION, returns="int[]", params=(
                    ParamSpec(name="tankId", semantic_type="int", invalid_classes=("unknown-tank",)),
                )),
            ),
            patterns=("singleton",),
            tech_constraints=(JAVA,),
            depends_on=("Tank",),
        ),
        ArchElement(
            module_id="CollisionChecker",
            responsibilities="Detects collisions between tanks, including diagonal approaches.",
            contracts=(
                MethodContract(signature=CHECK_COLLISION, returns="boolean", params=(
                    ParamSpec(name="dx", semantic_type="int", numeric_range=(-40, 40)),
                    ParamSpec(name="dy", semantic_type="int", numeric_range=(-40, 40)),
                )),
            ),
            tech_constraints=(JAVA,),
            depends_on=("GameStateData",),
        ),
        ArchElement(
            module_id="GameView",
            responsibilities="Renders the battlefield and tanks every frame.",
            contracts=(MethodContract(signature="render()"),),
            patterns=("observer",),
            tech_constraints=(JAVA, JAVAFX),
            depends_on=("GameStateData",),
        ),
        ArchElement(
            module_id="TankWarApp",
            responsibilities="Application entry point wiring the view and the game loop.",
            contracts=(MethodContract(signature="start()"),),
            tech_constraints=(JAVA,),
            depends_on=("GameView", "CollisionChecker"),
        ),
    ))


def tank_srs() -> SrsDocument:
    req = RequirementItem
    return SrsDocument(
        project="Tank Battle",
        requirements=(
            req(id="REQ-001", kind="functional", source_ref="SRS 3.1",
                text="Tanks move freely within the 800x600 battlefield.", constraints=(JAVA,)),
            req(id="REQ-002", kind="functional", source_ref="SRS 3.2",
                text="A hit decreases the health of the hit tank by the damage dealt."),
            req(id="REQ-003", kind="functional", source_ref="SRS 3.3",
                text="Collisions between tanks are detected, including diagonal approaches."),
            req(id="REQ-004", kind="user-story", source_ref="SRS 4.1",
                text="As a player I see the battlefield redrawn every frame."),
            req(id="REQ-005", kind="acceptance-criterion", source_ref="SRS 5.1",
                text="Launching the application opens the battle screen."),
        ),
        trace_links=(
            TraceLink(requirement_id="REQ-001", module_id="Tank", method_signature="moveTo(int x, int y)"),
            TraceLink(requirement_id="REQ-002", module_id="GameStateData",
                      method_signature="decreaseHealth(int tankId, int damage)"),
            TraceLink(requirement_id="REQ-002", module_id="Tank", method_signature="getHealth()"),
            TraceLink(requirement_id="REQ-003", module_id="CollisionChecker", method_signature=CHECK_COLLISION),
            TraceLink(requirement_id="REQ-003", module_id="GameStateData", method_signature=GET_POSITION),
            TraceLink(requirement_id="REQ-004", module_id="GameView", method_signature="render()"),
            TraceLink(requirement_id="REQ-005", module_id="TankWarApp", method_signature="start()"),
        ),
    )


def tank_knowledge() -> list[KnowledgeDoc]:
    return [
        KnowledgeDoc(id="std-java-style", corpus="srs-add", pillar="Standards",
                     keywords=("java", "lang", "style"),
                     body="Java naming: UpperCamelCase types, lowerCamelCase members."),
        KnowledgeDoc(id="api-javafx-graphics", corpus="coding", pillar="API Library",
                     keywords=("javafx", "graphics", "canvas", "render"),
                     body="javafx.scene.canvas.Canvas with GraphicsContext for immediate-mode drawing."),
        KnowledgeDoc(id="coding-game-loop", corpus="coding", pillar="Open Source Projects",
                     keywords=("tank", "collision", "game", "health"),
                     body="AnimationTimer driven loop: update state, check collisions, render."),
        KnowledgeDoc(id="testing-junit5", corpus="testing", pillar="Testing Tools",
                     keywords=("java", "junit", "javafx"),
                     body="JUnit 5\nJupiter API with parameterized tests."),
        KnowledgeDoc(id="testing-bva", corpus="testing", pillar="Testing Criteria",
                     keywords=("boundary", "partition"),
                     body="Boundary value analysis pairs every limit with its nearest invalid neighbour."),
    ]


# -- responder ---------------------------------------------------------------


def _method(signature: str) -> str:
    return signature.split("(", 1)[0].split()[-1]


def responder(defects: bool):
    """Rule-based stand-in for a generator. ``defects`` seeds the two case-study faults."""

    def answer(kind: str, ctx: dict[str, Any]) -> Any:
        if kind == "plan-proposal":
            elements = [ArchElement.parse(e) for e in ctx["elements"]]
            graph: dict[str, list[str]] = {e.module_id: [] for e in elements}
            for e in elements:
                for d in e.depends_on:
                    graph[d].append(e.module_id)
            children = {}
            for e in elements:
                sub = PACKAGES.get(e.module_id)
                if sub:
                    children.setdefault(sub, []).append(e.module_id)
            root_modules = tuple(e.module_id for e in elements if e.module_id not in PACKAGES)
            return CodePlan(
                version=1,
                steps=tuple(PlanStep(module_id=e.module_id, rationale=e.responsibilities,
                                     contracts=e.contracts, tech_constraints=e.tech_constraints)
                            for e in elements),
                dep_graph={m: tuple(sorted(vs)) for m, vs in graph.items()},
                packages=PackageNode(name="basicTankWarApp", modules=root_modules, children=tuple(
                    PackageNode(name=name, modules=tuple(sorted(ms))) for name, ms in sorted(children.items()))),
            )
        if kind == "api-proposal":
            return ApiManifest(entries=tuple(
                ApiEntry(library_name=lib["name"], version_constraint=lib["version"],
                         elements_used=("Canvas", "GraphicsContext"), purpose="battlefield rendering")
                for lib in ctx["libraries"]))
        if kind == "source-unit":
            m = ctx["module_id"]
            step = PlanStep.parse(ctx["step"])
            markers = []
            if defects and m == "CollisionChecker":
                position = next(c for c in ctx["dependencies"]["GameStateData"] if c["signature"] == GET_POSITION)
                if INIT_FIX not in position.get("exception_conditions", []):
                    markers.append(DefectMarker(kind="init", detail=INIT_DEFECT))
                markers.append(DefectMarker(kind="logic", detail=DIAGONAL_DEFECT, target_signature=CHECK_COLLISION))
            return StubBody(
                declares=(m,) + tuple(f"{m}.{c.method_name}" for c in step.contracts),
                references=tuple(sorted(f"{d}.{_method(cs[0]['signature'])}"
                                        for d, cs in ctx["dependencies"].items() if cs)),
                defect_markers=tuple(markers),
            )
        if kind == "fix-snippet":
            # Local patching cannot repair a fault rooted in another module's design.
            return ctx["body"]
        if kind == "plan-revision":
            plan = CodePlan.parse(ctx["plan"])
            steps = []
            for s in plan.steps:
                if s.module_id == "GameStateData":
                    contracts = tuple(
                        c.model_copy(update={"exception_conditions": c.exception_conditions + (INIT_FIX,)})
                        if c.signature == GET_POSITION else c for c in s.contracts)
                    s = s.model_copy(update={"contracts": contracts,
                                             "rationale": s.rationale + " Positions are set in the constructor."})
                steps.append(s)
            return plan.model_copy(update={"version": plan.version + 1, "steps": tuple(steps)})
        if kind == "rectification":
            return {"units": {
                m: StubBody.parse(body).model_copy(update={"defect_markers": tuple(
                    d for d in StubBody.parse(body).defect_markers if d.kind != "logic")}).to_dict()
                for m, body in ctx["bodies"].items()
            }}
        raise ValueError(f"no rule for {kind}")

    return answer


# -- writing -----------------------------------------------------------------


def write(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(data.to_dict() if hasattr(data, "to_dict") else data), encoding="utf-8")


def record(name: str, defects: bool, budgets: Budgets) -> None:
    out = HERE / name
    shutil.rmtree(out / "fixtures", ignore_errors=True)
    backend = RecordingBackend(responder(defects))
    kb = KnowledgeBase.load_pack(HERE / "tank_inputs" / "knowledge")
    with tempfile.TemporaryDirectory() as tmp:
        ws = Workspace.init(Path(tmp) / "ws", HERE / "tank_inputs" / "srs.json", HERE / "tank_inputs" / "add.json")
        outcome = Orchestrator(ws, backend, StubToolchain(), kb, budgets).run()
    if outcome.status != "Done":
        raise SystemExit(f"{name}: recording run ended {outcome.status}: {outcome.reason}")
    backend.write(out / "fixtures")


def scenario_file(name: str, description: str, fixtures: str, expectations: dict,
                  budgets: Budgets = Budgets(), fault_schedule: tuple = ()) -> None:
    write(HERE / name / "scenario.json", {
        "name": name,
        "description": description,
        "srs": "../tank_inputs/srs.json",
        "add": "../tank_inputs/add.json",
        "knowledge_pack": "../tank_inputs/knowledge",
        "fixtures": fixtures,
        "fault_schedule": [f.to_dict() if hasattr(f, "to_dict") else f for f in fault_schedule],
        "budgets": budgets.to_dict(),
        "expectations": expectations,
    })


def main() -> int:
    inputs = HERE / "tank_inputs"
    write(inputs / "srs.json", tank_srs())
    write(inputs / "add.json", tank_add())
    for doc in tank_knowledge():
        write(inputs / "knowledge" / f"{doc.id}.json", doc)

    record("tank_battle", defects=True, budgets=Budgets())
    record("all_clean", defects=False, budgets=Budgets())

    scenario_file(
        "tank_battle",
        "Golden run: an uninitialized position found at launch is fixed by plan revision after "
        "self-debugging stalls; missed diagonal collisions are fixed by one rectification round.",
        "fixtures",
        {"outcome": "Done", "plan_version": 2, "revisions": 1, "rectification_rounds": 1,
         "improvement_records": 2, "defects_repaired": 2, "final_defects": 0, "coverage": 1.0,
         "audit_items": 0, "feedback": {"launch_check": "D + 1", "compiler": 0}},
    )
    scenario_file(
        "all_clean",
        "Every generated unit compiles, launches and passes its tests on the first try.",
        "fixtures",
        {"outcome": "Done", "plan_version": 1, "revisions": 0, "improvement_records": 0,
         "final_defects": 0, "coverage": 1.0, "audit_items": 0,
         "feedback": {"compiler": 0, "launch_check": 0, "test_report": 0, "quality_check": 0}},
    )
    scenario_file(
        "permanent_failure",
        "Tank never compiles; the run must escalate once every repair budget is spent.",
        "../all_clean/fixtures",
        {"outcome": "Escalated", "audit_items": 1, "revisions": "P", "plan_version": "P + 1",
         "compile_attempts": {"Tank": "(P + 1) * (1 + D)"}},
        fault_schedule=({"module": "Tank", "kind": "compile", "attempts": "all",
                         "detail": "SyntaxError: unbalanced braces in Tank"},),
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
