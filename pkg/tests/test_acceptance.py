"""Acceptance criteria; each test records one pass/fail line for the terminal summary."""

from __future__ import annotations

import random
import time
from contextlib import contextmanager

from hypothesis import given, settings

from appforge.model import (
    Budgets,
    CodePlan,
    Directive,
    MethodContract,
    PackageNode,
    PlanStep,
    conflict_set,
    plan_diff,
    topo_order,
)
from appforge.orchestrator import load_run_state
from appforge.scenario import execute, load_scenario, run_scenario
from appforge.ta import derive_test_cases, expected_case_count, regenerate_affected
from tests.conftest import SCENARIOS
from tests.oracles import (
    lexicographic_topo,
    linked_by_scan,
    random_contract,
    random_dag,
    random_matrix,
    reach_by_closure,
)
from tests.strategies import ALL
from tests.test_orchestrator import resumer

RESULTS: list[str] = []


@contextmanager
def criterion(n: int, text: str):
    try:
        yield
    except BaseException:
        RESULTS.append(f"FAIL  criterion {n}: {text}")
        print(RESULTS[-1])
        raise
    RESULTS.append(f"PASS  criterion {n}: {text}")
    print(RESULTS[-1])


def plan_over(graph: dict[str, tuple[str, ...]], version: int, changed: frozenset[str] = frozenset()) -> CodePlan:
    steps = tuple(
        PlanStep(module_id=m, contracts=(
            MethodContract(signature="op()", returns="int" if m in changed else "void"),))
        for m in topo_order(graph))
    return CodePlan(version=version, steps=steps, dep_graph=graph,
                    packages=PackageNode(name="app", modules=tuple(sorted(graph))))


def test_golden_scenario():
    with criterion(1, "golden scenario reaches Done via revision and rectification in under 1 s"):
        start = time.perf_counter()
        result = run_scenario(SCENARIOS / "tank_battle")
        elapsed = time.perf_counter() - start
        m = result.metrics
        assert result.passed, result.mismatches
        assert (m["plan_version"], m["revisions"], m["rectification_rounds"]) == (2, 1, 1)
        assert m["improvement_records"] == 2 and m["final_defects"] == 0 and m["coverage"] == 1.0
        assert elapsed < 1.0, elapsed


def test_routing_bound(tmp_path):
    with criterion(2, "permanent failure escalates after exactly (P+1)(1+D) compile attempts"):
        loaded = load_scenario(SCENARIOS / "permanent_failure")
        for (d, p), want in {(0, 0): 1, (1, 1): 4, (3, 2): 12}.items():
            ws, outcome = execute(loaded, tmp_path / f"{d}-{p}", Budgets(self_debug=d, plan_revision=p))
            assert outcome.status == "Escalated"
            assert load_run_state(ws).compile_attempts["Tank"] == want, (d, p)


def test_graph_oracles():
    with criterion(3, "topo_order and conflict_set agree with brute force on 200 random DAGs in under 5 s"):
        rng = random.Random(2024)
        start = time.perf_counter()
        for _ in range(200):
            nodes, graph = random_dag(rng, 8)
            edges = {(u, v) for u, vs in graph.items() for v in vs}
            assert topo_order(graph) == lexicographic_topo(nodes, edges)
            seeds = frozenset(rng.sample(nodes, rng.randint(1, len(nodes))))
            diff = plan_diff(plan_over(graph, 1), plan_over(graph, 2, seeds))
            assert conflict_set(diff, graph) == reach_by_closure(graph, seeds)
        assert time.perf_counter() - start < 5.0


def test_derivation_count(tank_add):
    with criterion(4, "case count formula holds on 100 random contracts and decreaseHealth yields 7"):
        rng = random.Random(99)
        for i in range(100):
            contract = random_contract(rng, i)
            assert len(derive_test_cases(contract, "REQ-001", "M")) == expected_case_count(contract)
        state = next(e for e in tank_add.elements if e.module_id == "GameStateData")
        decrease = next(c for c in state.contracts if c.method_name == "decreaseHealth")
        assert len(derive_test_cases(decrease, "REQ-002", "GameStateData")) == 7


def test_traceability_regeneration():
    with criterion(5, "one changed requirement regenerates exactly its linked cases"):
        rng = random.Random(5)
        for _ in range(200):
            matrix = random_matrix(rng, 50)
            assert len(matrix.rows) <= 50
            req = rng.choice(matrix.rows).requirement_id
            assert regenerate_affected(matrix, [req], []) == linked_by_scan(matrix, req)


def test_determinism(tmp_path):
    names = ("tank_battle", "all_clean", "permanent_failure")
    with criterion(6, "two runs of each bundled scenario give byte-identical artifact trees"):
        for name in names:
            loaded = load_scenario(SCENARIOS / name)
            a, _ = execute(loaded, tmp_path / name / "a")
            b, _ = execute(loaded, tmp_path / name / "b")
            assert a.tree() == b.tree(), name


def test_resume_contract(tmp_path):
    with criterion(7, "escalated golden variant resumes to Done with an amendment and stays Escalated on abort"):
        loaded = load_scenario(SCENARIOS / "tank_battle")
        done, _ = execute(loaded, tmp_path / "done")
        variant = Budgets(self_debug=3, plan_revision=0, rectification=3)
        ws, outcome = execute(loaded, tmp_path / "amend", variant)
        assert outcome.status == "Escalated"
        resumed = resumer(ws, SCENARIOS / "tank_battle").resume(
            resolution=Directive(action="amend", plan=done.load("plan", 2)))
        assert resumed.status == "Done"
        ws, _ = execute(loaded, tmp_path / "abort", variant)
        before = ws.tree()
        aborted = resumer(ws, SCENARIOS / "tank_battle").resume(resolution=Directive(action="abort"))
        assert aborted.status == "Escalated"
        after = ws.tree()
        assert all(k in after for k in before)
        assert all(after[k] == v for k, v in before.items() if k.startswith(("artifacts/plan", "src/", "inputs/")))


def test_round_trip():
    with criterion(8, f"serialize and parse are inverse for all {len(ALL)} artifact types"):
        for name, strategy in sorted(ALL.items()):
            @settings(max_examples=25, deadline=None)
            @given(strategy)
            def check(instance):
                text = instance.dumps()
                assert type(instance).loads(text).dumps() == text

            check()
