"""Sweep the self-debug and plan-revision budgets and print the cost of each point.

The permanently failing scenario shows the (P+1)(1+D) attempt bound; the
golden scenario shows where small budgets stop being enough to converge.
"""

from __future__ import annotations

import sys
from pathlib import Path

from appforge.scenario import sweep, write_table

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def main() -> int:
    print("# permanent failure: compile attempts against D and P")
    rows = sweep(SCENARIOS / "permanent_failure", {"D": [0, 1, 2, 3], "P": [0, 1, 2]})
    for row in rows:
        bound = (row["P"] + 1) * (1 + row["D"])
        print(f"D={row['D']} P={row['P']} attempts={row['compile_attempts_max']:2} bound={bound:2} "
              f"outcome={row['outcome']}")

    print("\n# tank battle: convergence against D and P")
    rows = sweep(SCENARIOS / "tank_battle", {"D": [0, 1, 3], "P": [0, 1], "R": [0, 1]})
    write_table(rows, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
