"""Toolchain adapters: compile, launch-check and test-run a set of units.

The stub toolchain interprets ``StubBody`` values symbolically; the command
toolchain shells out to configured commands and parses their output.
"""

from __future__ import annotations

import json
import re
import shlex
import subprocess
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Protocol

from appforge.errors import ToolchainUnavailableError
from appforge.model import Artifact, CompilationLog, Diagnostic, LaunchOutcome, SourceUnit, TestCase


@dataclass(frozen=True)
class CaseResult:
    passed: bool
    actual: dict[str, Any]


class Toolchain(Protocol):
    def compile(self, scope: str, units: Sequence[SourceUnit], ordinal: int,
                resolved: Sequence[SourceUnit] = ()) -> CompilationLog: ...

    def launch_check(self, units: Sequence[SourceUnit]) -> LaunchOutcome: ...

    def run_tests(self, cases: Sequence[TestCase], units: Sequence[SourceUnit]) -> dict[str, CaseResult]: ...


def _names_category(detail: str, category: str) -> bool:
    return re.search(rf"\b{re.escape(category)}\b", detail.lower()) is not None


class StubToolchain:
    """Deterministic interpreter of stub bodies; every method is a pure function."""

    def compile(self, scope: str, units: Sequence[SourceUnit], ordinal: int,
                resolved: Sequence[SourceUnit] = ()) -> CompilationLog:
        """Compile ``units``; references resolve against their declares plus ``resolved``."""
        symbols: set[str] = set()
        for u in list(units) + list(resolved):
            symbols.update(u.body.declares)
        diagnostics = []
        for unit in sorted(units, key=lambda u: u.path):
            body = unit.body
            line = len(body.declares)
            for ref in body.references:
                line += 1
                if ref not in symbols:
                    diagnostics.append(Diagnostic(
                        severity="error",
                        error_type="UnresolvedSymbol",
                        location=(unit.path, line),
                        message=f"cannot resolve symbol '{ref}'",
                        suggested_fix=f"declare '{ref}' or add a dependency on the module that declares it",
                    ))
            for marker in body.defect_markers:
                line += 1
                if marker.kind == "compile":
                    error_type = marker.detail.split(":", 1)[0].strip() if ":" in marker.detail else "CompileError"
                    diagnostics.append(Diagnostic(
                        severity="error", error_type=error_type,
                        location=(unit.path, line), message=marker.detail,
                    ))
        return CompilationLog.from_diagnostics(scope, diagnostics, ordinal)

    def launch_check(self, units: Sequence[SourceUnit]) -> LaunchOutcome:
        for unit in units:
            for marker in unit.body.defect_markers:
                if marker.kind == "init":
                    return LaunchOutcome(ok=False, module=unit.module_id, unit_path=unit.path,
                                         detail=f"{unit.module_id}: {marker.detail}")
        return LaunchOutcome(ok=True)

    def run_tests(self, cases: Sequence[TestCase], units: Sequence[SourceUnit]) -> dict[str, CaseResult]:
        by_module = {u.module_id: u for u in units}
        results = {}
        for case in cases:
            unit = by_module.get(case.module_id)
            failing = None
            if unit is not None:
                for marker in unit.body.defect_markers:
                    if (marker.kind == "logic"
                            and marker.target_signature == case.trace.method_signature
                            and _names_category(marker.detail, case.category)):
                        failing = marker
                        break
            if failing is None:
                results[case.id] = CaseResult(True, dict(case.oracle))
            else:
                results[case.id] = CaseResult(False, {"outcome": "mismatch", "detail": failing.detail})
        return results


class ToolchainConfig(Artifact):
    compile_cmd: str
    launch_cmd: str
    test_cmd: str
    diag_pattern: str = r"^(?P<path>[^:]+):(?P<line>\d+):(?P<severity>\w+):(?P<message>.*)$"
    timeout_seconds: float = 60.0

    @classmethod
    def from_file(cls, path: str | Path) -> ToolchainConfig:
        return cls.loads(Path(path).read_text(encoding="utf-8"))


_SEVERITY = {"error": "error", "fatal": "error", "warning": "warning", "warn": "warning", "note": "warning"}
_RESULT_LINE = re.compile(r"^(PASS|FAIL)\s+(\S+)(?:\s+(.*))?$")


def parse_diagnostics(output: str, pattern: str) -> list[Diagnostic]:
    """Parse tool output line by line; unmatched lines become message-only warnings."""
    regex = re.compile(pattern)
    diagnostics = []
    for raw in output.splitlines():
        line = raw.rstrip()
        if not line.strip():
            continue
        m = regex.match(line)
        if m is None:
            diagnostics.append(Diagnostic(severity="warning", error_type="unparsed",
                                          location=("", 0), message=line))
            continue
        groups = m.groupdict()
        severity = _SEVERITY.get((groups.get("severity") or "error").strip().lower(), "error")
        diagnostics.append(Diagnostic(
            severity=severity,
            error_type=(groups.get("error_type") or severity).strip(),
            location=(groups.get("path", "").strip(), int(groups.get("line") or 0)),
            message=(groups.get("message") or "").strip(),
            suggested_fix=(groups.get("fix") or None),
        ))
    return diagnostics


class CommandToolchain:
    """Runs configured commands in ``workspace``; one command at a time.

    Command templates may use ``{workspace}`` and ``{scope}``.
    """

    def __init__(self, config: ToolchainConfig, workspace: str | Path) -> None:
        self.config = config
        self.workspace = Path(workspace)

    def _run(self, template: str, scope: str = "integration", *, launch: bool = False) -> subprocess.CompletedProcess | None:
        argv = shlex.split(template.format(workspace=str(self.workspace), scope=scope))
        try:
            return subprocess.run(argv, cwd=self.workspace, capture_output=True, text=True,
                                  timeout=self.config.timeout_seconds)
        except FileNotFoundError as exc:
            raise ToolchainUnavailableError(f"command not found: {argv[0]}") from exc
        except subprocess.TimeoutExpired as exc:
            if launch:
                return None
            raise ToolchainUnavailableError(
                f"command timed out after {self.config.timeout_seconds}s: {argv[0]}") from exc

    def compile(self, scope: str, units: Sequence[SourceUnit], ordinal: int,
                resolved: Sequence[SourceUnit] = ()) -> CompilationLog:
        proc = self._run(self.config.compile_cmd, scope)
        diagnostics = parse_diagnostics(proc.stdout + proc.stderr, self.config.diag_pattern)
        if proc.returncode != 0 and not any(d.severity == "error" for d in diagnostics):
            diagnostics.append(Diagnostic(severity="error", error_type="ExitStatus", location=("", 0),
                                          message=f"compile command exited with status {proc.returncode}"))
        return CompilationLog.from_diagnostics(scope, diagnostics, ordinal)

    def launch_check(self, units: Sequence[SourceUnit]) -> LaunchOutcome:
        proc = self._run(self.config.launch_cmd, launch=True)
        if proc is None:
            return LaunchOutcome(ok=False, detail=f"launch did not finish within {self.config.timeout_seconds}s")
        if proc.returncode != 0:
            tail = (proc.stderr or proc.stdout).strip().splitlines()[-1:] or [""]
            return LaunchOutcome(ok=False, detail=f"launch exited with status {proc.returncode}: {tail[0]}")
        return LaunchOutcome(ok=True)

    def run_tests(self, cases: Sequence[TestCase], units: Sequence[SourceUnit]) -> dict[str, CaseResult]:
        proc = self._run(self.config.test_cmd)
        reported: dict[str, CaseResult] = {}
        for line in (proc.stdout or "").splitlines():
            m = _RESULT_LINE.match(line.strip())
            if not m:
                continue
            status, case_id, rest = m.groups()
            actual: dict[str, Any]
            try:
                actual = json.loads(rest) if rest else {}
                if not isinstance(actual, dict):
                    actual = {"value": actual}
            except json.JSONDecodeError:
                actual = {"output": rest}
            reported[case_id] = CaseResult(status == "PASS", actual)
        results = {}
        for case in cases:
            results[case.id] = reported.get(case.id, CaseResult(False, {"outcome": "not reported"}))
        return results

