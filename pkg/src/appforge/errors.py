"""Exception hierarchy shared by every appforge module."""

from __future__ import annotations

from typing import Any


class AppForgeError(Exception):
    """Base class for all appforge errors."""


class SchemaError(AppForgeError):
    """An input document or backend payload does not match its schema."""


class CycleError(AppForgeError):
    def __init__(self, members: list[str]) -> None:
        self.members = members
        super().__init__(f"dependency cycle among: {', '.join(members)}")


class VersionError(AppForgeError):
    pass


class PlanValidationError(AppForgeError):
    def __init__(self, violations: list[str]) -> None:
        self.violations = violations
        super().__init__("plan rejected: " + "; ".join(violations))


class NoChangeError(AppForgeError):
    """The backend returned a revision identical to the current plan."""


class PillarError(AppForgeError):
    pass


class NoFixtureError(AppForgeError):
    """A scripted backend has no fixture for the requested fingerprint."""

    def __init__(self, kind: str, fingerprint: str, context: dict[str, Any]) -> None:
        self.kind = kind
        self.fingerprint = fingerprint
        self.context = context
        super().__init__(f"no fixture for {kind} request {fingerprint}")


class TransportError(AppForgeError):
    pass


class ToolchainUnavailableError(AppForgeError):
    pass


class DependencyNotReadyError(AppForgeError):
    pass


class BudgetExhausted(AppForgeError):
    pass


class RangeError(AppForgeError):
    pass


class UnmappableRequirementError(AppForgeError):
    pass


class NotEmptyError(AppForgeError):
    pass


class ConflictError(AppForgeError):
    """Attempt to overwrite an append-only artifact."""


class NotFoundError(AppForgeError):
    pass


class DanglingReferenceError(AppForgeError):
    pass


class WorkspaceLockedError(AppForgeError):
    pass


class UnknownRunError(AppForgeError):
    pass


class UnresolvedItemError(AppForgeError):
    pass


class ScenarioSchemaError(AppForgeError):
    pass


class FixtureGapError(AppForgeError):
    """A scenario run needed a fixture that the fixture directory lacks."""

    def __init__(self, kind: str, fingerprint: str, context_summary: str) -> None:
        self.kind = kind
        self.fingerprint = fingerprint
        self.context_summary = context_summary
        super().__init__(
            f"missing {kind} fixture {fingerprint}; context: {context_summary}"
        )
