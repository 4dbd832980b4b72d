"""Generator backends: the single door through which every generative step passes.

``ScriptedBackend`` replays fixtures keyed by request fingerprint,
``FaultInjectingBackend`` wraps another backend and corrupts payloads on a
schedule, ``RecordingBackend`` authors fixture tables from a responder
function, and ``RemoteBackend`` speaks the HTTP contract.
"""

from __future__ import annotations

import hashlib
import json
import time
import urllib.error
import urllib.request
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Optional, Protocol, Union

from appforge.errors import NoFixtureError, SchemaError, TransportError
from appforge.model import (
    ApiManifest,
    Artifact,
    CodePlan,
    DefectMarker,
    StubBody,
    canonical_json,
)


class RectificationPayload(Artifact):
    units: dict[str, StubBody] = {}
    manifest: Optional[ApiManifest] = None


SCHEMAS: dict[str, type[Artifact]] = {
    "code-plan": CodePlan,
    "stub-body": StubBody,
    "rectification": RectificationPayload,
    "api-manifest": ApiManifest,
}

KIND_SCHEMA = {
    "plan-proposal": "code-plan",
    "plan-revision": "code-plan",
    "source-unit": "stub-body",
    "fix-snippet": "stub-body",
    "rectification": "rectification",
    "api-proposal": "api-manifest",
}


def fingerprint(kind: str, context: dict[str, Any]) -> str:
    blob = json.dumps({"kind": kind, "context": context}, sort_keys=True,
                      separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def summarize_context(context: dict[str, Any], limit: int = 160) -> str:
    parts = []
    for key in sorted(context):
        value = context[key]
        if isinstance(value, (str, int, float, bool)) or value is None:
            parts.append(f"{key}={value}")
        elif isinstance(value, (list, tuple)):
            parts.append(f"{key}[{len(value)}]")
        else:
            parts.append(f"{key}{{...}}")
    text = ", ".join(parts)
    return text if len(text) <= limit else text[: limit - 3] + "..."


@dataclass(frozen=True)
class GenRequest:
    kind: str
    context: dict[str, Any]
    schema_id: str
    fingerprint: str

    @classmethod
    def make(cls, kind: str, context: dict[str, Any]) -> GenRequest:
        if kind not in KIND_SCHEMA:
            raise ValueError(f"unknown request kind {kind!r}")
        # Normalise tuples and models to plain JSON values before hashing.
        context = json.loads(canonical_json(context))
        return cls(kind, context, KIND_SCHEMA[kind], fingerprint(kind, context))


@dataclass(frozen=True)
class GenResponse:
    payload: Artifact
    advisory: Optional[str] = None


def validate_payload(schema_id: str, payload: Any) -> Artifact:
    try:
        model = SCHEMAS[schema_id]
    except KeyError:
        raise SchemaError(f"unknown schema {schema_id!r}") from None
    return model.parse(payload)


class Backend(Protocol):
    def generate(self, req: GenRequest) -> GenResponse: ...


class ScriptedBackend:
    """Fixture-table lookup. Unknown fingerprints raise ``NoFixtureError``."""

    def __init__(self, table: Optional[dict[str, dict[str, Any]]] = None) -> None:
        self.table: dict[str, dict[str, Any]] = dict(table or {})
        self.calls: list[GenRequest] = []

    @classmethod
    def from_dir(cls, directory: Union[str, Path, Iterable[Union[str, Path]]]) -> ScriptedBackend:
        dirs = [directory] if isinstance(directory, (str, Path)) else list(directory)
        table: dict[str, dict[str, Any]] = {}
        for d in dirs:
            for path in sorted(Path(d).glob("*.json")):
                entry = json.loads(path.read_text(encoding="utf-8"))
                table[entry["fingerprint"]] = entry
        return cls(table)

    def generate(self, req: GenRequest) -> GenResponse:
        self.calls.append(req)
        entry = self.table.get(req.fingerprint)
        if entry is None or entry.get("kind") != req.kind:
            raise NoFixtureError(req.kind, req.fingerprint, req.context)
        payload = validate_payload(req.schema_id, entry["payload"])
        return GenResponse(payload, entry.get("advisory"))


class RecordingBackend:
    """Answers through ``responder`` and keeps every exchange as a fixture entry."""

    def __init__(self, responder: Callable[[str, dict[str, Any]], Any]) -> None:
        self.responder = responder
        self.entries: dict[str, dict[str, Any]] = {}

    def generate(self, req: GenRequest) -> GenResponse:
        raw = self.responder(req.kind, req.context)
        if isinstance(raw, Artifact):
            raw = raw.to_dict()
        payload = validate_payload(req.schema_id, raw)
        self.entries[req.fingerprint] = {
            "kind": req.kind,
            "fingerprint": req.fingerprint,
            "context": req.context,
            "payload": payload.to_dict(),
        }
        return GenResponse(payload)

    def write(self, directory: Union[str, Path]) -> list[Path]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for fp in sorted(self.entries):
            entry = self.entries[fp]
            path = out / f"{entry['kind']}-{fp[:16]}.json"
            path.write_text(canonical_json(entry), encoding="utf-8")
            written.append(path)
        return written


class FaultSpec(Artifact):
    module: str
    kind: Literal["compile", "init", "logic"]
    attempts: Union[Literal["all"], tuple[int, ...]] = (1,)
    detail: str = "injected fault"
    target_signature: Optional[str] = None

    def hits(self, attempt: int) -> bool:
        return self.attempts == "all" or attempt in self.attempts

    def marker(self) -> DefectMarker:
        return DefectMarker(kind=self.kind, detail=self.detail, target_signature=self.target_signature)


@dataclass
class FaultInjectingBackend:
    """Wraps ``inner``; injects defect markers into unit bodies on scheduled attempts.

    Attempts count every unit body delivered for a module (source-unit,
    fix-snippet and rectification payloads). For scheduled modules the
    wrapper also answers repair and revision requests that ``inner`` has no
    fixture for, from the first clean body it saw; unscheduled modules are
    passed through untouched.
    """

    inner: Backend
    schedule: list[FaultSpec]
    attempts: dict[str, int] = field(default_factory=dict)
    _clean: dict[str, StubBody] = field(default_factory=dict)

    def _faults(self, module: str) -> list[FaultSpec]:
        return [f for f in self.schedule if f.module == module]

    def _deliver(self, module: str, body: StubBody) -> StubBody:
        self._clean.setdefault(module, body)
        self.attempts[module] = self.attempts.get(module, 0) + 1
        markers = list(body.defect_markers)
        for fault in self._faults(module):
            if fault.hits(self.attempts[module]) and fault.marker() not in markers:
                markers.append(fault.marker())
        return body.model_copy(update={"defect_markers": tuple(markers)})

    def _inner_or(self, req: GenRequest, fallback: Callable[[], Artifact]) -> GenResponse:
        try:
            return self.inner.generate(req)
        except NoFixtureError:
            payload = fallback()
            return GenResponse(payload, "served by fault injector")

    def generate(self, req: GenRequest) -> GenResponse:
        ctx = req.context
        if req.kind in ("source-unit", "fix-snippet"):
            module = ctx["module_id"]
            if not self._faults(module):
                return self.inner.generate(req)

            def cached() -> Artifact:
                if module not in self._clean:
                    raise NoFixtureError(req.kind, req.fingerprint, ctx)
                return self._clean[module]

            resp = self._inner_or(req, cached)
            return GenResponse(self._deliver(module, resp.payload), resp.advisory)

        if req.kind == "rectification":
            scheduled = [m for m in ctx.get("modules", []) if self._faults(m)]
            if not scheduled:
                return self.inner.generate(req)

            def rebuild() -> Artifact:
                if any(m not in self._clean for m in ctx["modules"]):
                    raise NoFixtureError(req.kind, req.fingerprint, ctx)
                return RectificationPayload(units={m: self._clean[m] for m in ctx["modules"]})

            resp = self._inner_or(req, rebuild)
            units = dict(resp.payload.units)
            for m in scheduled:
                if m in units:
                    units[m] = self._deliver(m, units[m])
            return GenResponse(resp.payload.model_copy(update={"units": units}), resp.advisory)

        if req.kind == "plan-revision" and self._faults(ctx.get("subject", "")):
            subject = ctx["subject"]

            def revise() -> Artifact:
                plan = CodePlan.parse(ctx["plan"])
                version = plan.version + 1
                steps = tuple(
                    s.model_copy(update={"rationale": f"{s.rationale} [revision {version}: retry]".strip()})
                    if s.module_id == subject else s
                    for s in plan.steps
                )
                return plan.model_copy(update={"version": version, "steps": steps})

            return self._inner_or(req, revise)

        return self.inner.generate(req)


def generate_schedule(modules: Iterable[str], rate: float, seed: int, persistent: bool = False) -> list[FaultSpec]:
    """Seeded schedule: each module independently gets a compile fault with probability ``rate``."""
    import random

    rng = random.Random(seed)
    attempts: Union[str, tuple[int, ...]] = "all" if persistent else (1,)
    specs = []
    for module in sorted(modules):
        if rng.random() < rate:
            specs.append(FaultSpec(module=module, kind="compile", attempts=attempts,
                                   detail=f"SyntaxError: injected fault in {module}"))
    return specs


class RemoteBackend:
    """HTTP client: ``POST {base_url}/generate`` with ``{kind, schema_id, context}``."""

    def __init__(self, base_url: str, timeout: float = 30.0, retries: int = 2) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries

    def generate(self, req: GenRequest) -> GenResponse:
        body = json.dumps({"kind": req.kind, "schema_id": req.schema_id, "context": req.context}).encode()
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            http_req = urllib.request.Request(
                self.base_url + "/generate", data=body,
                headers={"Content-Type": "application/json"}, method="POST",
            )
            try:
                with urllib.request.urlopen(http_req, timeout=self.timeout) as resp:
                    data = json.loads(resp.read().decode("utf-8"))
                break
            except urllib.error.HTTPError as exc:
                last = exc
                if exc.code < 500:
                    raise TransportError(f"remote backend rejected request: HTTP {exc.code}") from exc
            except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                last = exc
            except json.JSONDecodeError as exc:
                raise TransportError("remote backend returned non-JSON body") from exc
            if attempt < self.retries:
                time.sleep(min(0.05 * 2 ** attempt, 1.0))
        else:
            raise TransportError(f"remote backend unreachable after {self.retries + 1} attempts: {last}")
        if not isinstance(data, dict) or "payload" not in data:
            raise SchemaError("remote response lacks 'payload'")
        return GenResponse(validate_payload(req.schema_id, data["payload"]), data.get("advisory"))
