"""On-disk workspace: layout, append-only artifact store, improvement log, lock."""

from __future__ import annotations

import json
import os
import re
import shutil
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator, Optional, Union

from appforge.errors import (
    ConflictError,
    DanglingReferenceError,
    NotEmptyError,
    NotFoundError,
    WorkspaceLockedError,
)
from appforge.model import (
    AddDocument,
    ApiManifest,
    Artifact,
    AuditQueue,
    CodePlan,
    CompilationLog,
    FeedbackEvent,
    ImprovementRecord,
    LaunchOutcome,
    ProjectStructure,
    QualityReport,
    SourceUnit,
    SrsDocument,
    TestPlan,
    TestReport,
    TraceabilityMatrix,
    canonical_json,
)

LAYOUT = ("inputs", "artifacts", "src", "tests", "audit")
LOCK_NAME = ".appforge.lock"

# kind -> (path template, model, policy); policy is "versioned", "ordinal" or "replace"
KINDS: dict[str, tuple[str, type[Artifact], str]] = {
    "plan": ("artifacts/plan-v{n}.json", CodePlan, "versioned"),
    "compile": ("artifacts/compile-{n}.json", CompilationLog, "ordinal"),
    "report": ("artifacts/report-{n}.json", TestReport, "ordinal"),
    "feedback": ("artifacts/feedback-{n}.json", FeedbackEvent, "ordinal"),
    "launch": ("artifacts/launch-{n}.json", LaunchOutcome, "ordinal"),
    "quality": ("artifacts/quality-{n}.json", QualityReport, "ordinal"),
    "manifest": ("artifacts/manifest.json", ApiManifest, "replace"),
    "structure": ("artifacts/structure.json", ProjectStructure, "replace"),
    "trace-matrix": ("artifacts/trace-matrix.json", TraceabilityMatrix, "replace"),
    "test-plan": ("artifacts/test-plan.json", TestPlan, "replace"),
}
_BY_MODEL = {model: kind for kind, (_, model, _) in KINDS.items()}

SourceDoc = Union[str, bytes, Path, dict, Artifact]


def _doc_bytes(doc: SourceDoc) -> bytes:
    if isinstance(doc, Artifact):
        return doc.dumps().encode("utf-8")
    if isinstance(doc, dict):
        return canonical_json(doc).encode("utf-8")
    if isinstance(doc, Path):
        return doc.read_bytes()
    if isinstance(doc, str):
        return doc.encode("utf-8")
    return bytes(doc)


class Workspace:
    def __init__(self, root: Union[str, Path]) -> None:
        self.root = Path(root)

    # -- lifecycle ---------------------------------------------------------

    @classmethod
    def init(cls, root: Union[str, Path], srs: SourceDoc, add: SourceDoc, *, force: bool = False) -> Workspace:
        """Create the layout and store both input documents verbatim.

        With ``force`` an existing tree is moved under ``archive/<n>/``
        rather than deleted.
        """
        root = Path(root)
        srs_bytes, add_bytes = _doc_bytes(srs), _doc_bytes(add)
        SrsDocument.loads(srs_bytes.decode("utf-8"))
        AddDocument.loads(add_bytes.decode("utf-8"))
        if root.exists() and any(p.name != "archive" for p in root.iterdir()):
            if not force:
                raise NotEmptyError(f"workspace root {root} is not empty")
            cls._archive(root)
        root.mkdir(parents=True, exist_ok=True)
        for name in LAYOUT:
            (root / name).mkdir()
        (root / "inputs" / "srs.json").write_bytes(srs_bytes)
        (root / "inputs" / "add.json").write_bytes(add_bytes)
        return cls(root)

    @staticmethod
    def _archive(root: Path) -> Path:
        archive = root / "archive"
        archive.mkdir(exist_ok=True)
        n = 1 + max((int(p.name) for p in archive.iterdir() if p.name.isdigit()), default=0)
        dest = archive / str(n)
        dest.mkdir()
        for entry in sorted(root.iterdir()):
            if entry.name not in ("archive", LOCK_NAME):
                shutil.move(str(entry), str(dest / entry.name))
        return dest

    @classmethod
    def open(cls, root: Union[str, Path]) -> Workspace:
        ws = cls(root)
        missing = [name for name in LAYOUT if not (ws.root / name).is_dir()]
        if missing:
            raise NotFoundError(f"{root} is not a workspace (missing {', '.join(missing)})")
        return ws

    @contextmanager
    def lock(self) -> Iterator[None]:
        path = self.root / LOCK_NAME
        try:
            fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise WorkspaceLockedError(f"workspace {self.root} is locked ({path})") from None
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            yield
        finally:
            path.unlink(missing_ok=True)

    # -- raw files ---------------------------------------------------------

    def path(self, rel: str) -> Path:
        return self.root / rel

    def exists(self, rel: str) -> bool:
        return (self.root / rel).exists()

    def write_text(self, rel: str, text: str) -> str:
        target = self.root / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
        return rel

    def read_text(self, rel: str) -> str:
        try:
            return (self.root / rel).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise NotFoundError(f"no artifact at {rel}") from None

    def write_json(self, rel: str, data: Any) -> str:
        return self.write_text(rel, canonical_json(data))

    def read_json(self, rel: str) -> Any:
        return json.loads(self.read_text(rel))

    def srs(self) -> SrsDocument:
        return SrsDocument.loads(self.read_text("inputs/srs.json"))

    def add(self) -> AddDocument:
        return AddDocument.loads(self.read_text("inputs/add.json"))

    # -- artifacts ---------------------------------------------------------

    def ordinals(self, kind: str) -> list[int]:
        template = KINDS[kind][0]
        directory, name = template.rsplit("/", 1)
        regex = re.compile("^" + re.escape(name).replace(r"\{n\}", r"(\d+)") + "$")
        found = []
        base = self.root / directory
        if base.is_dir():
            for p in base.iterdir():
                m = regex.match(p.name)
                if m:
                    found.append(int(m.group(1)))
        return sorted(found)

    def next_ordinal(self, kind: str) -> int:
        return max(self.ordinals(kind), default=0) + 1

    def ref(self, kind: str, n: Optional[int] = None) -> str:
        return KINDS[kind][0].format(n=n)

    def persist(self, artifact: Artifact, n: Optional[int] = None) -> str:
        """Write ``artifact`` and return its workspace-relative path.

        Plans are keyed by version and logs/reports/events by ordinal; both
        are append-only. ``FeedbackEvent`` gets the next free ordinal when
        ``n`` is omitted. Source units go to their own ``path``.
        """
        if isinstance(artifact, SourceUnit):
            return self.write_text(artifact.path, artifact.dumps())
        kind = _BY_MODEL.get(type(artifact))
        if kind is None:
            raise TypeError(f"no storage rule for {type(artifact).__name__}")
        template, _, policy = KINDS[kind]
        if policy == "versioned":
            n = artifact.version
        elif policy == "ordinal" and n is None:
            n = getattr(artifact, "ordinal", None) or self.next_ordinal(kind)
        rel = template.format(n=n)
        if policy != "replace" and self.exists(rel):
            raise ConflictError(f"{rel} already exists; {kind} artifacts are append-only")
        return self.write_text(rel, artifact.dumps())

    def load(self, kind: str, n: Optional[int] = None) -> Artifact:
        template, model, policy = KINDS[kind]
        if policy != "replace" and n is None:
            found = self.ordinals(kind)
            if not found:
                raise NotFoundError(f"no {kind} artifacts")
            n = found[-1]
        return model.loads(self.read_text(template.format(n=n)))

    def load_unit(self, rel: str) -> SourceUnit:
        return SourceUnit.loads(self.read_text(rel))

    # -- improvement log ---------------------------------------------------

    IMPROVEMENT_LOG = "artifacts/improvement-log.json"

    def improvements(self) -> list[ImprovementRecord]:
        if not self.exists(self.IMPROVEMENT_LOG):
            return []
        return [ImprovementRecord.parse(r) for r in self.read_json(self.IMPROVEMENT_LOG)]

    def record_improvement(self, record: ImprovementRecord) -> int:
        """Append ``record`` with the next ordinal; its trigger must exist on disk."""
        if not self.exists(record.trigger):
            raise DanglingReferenceError(f"improvement trigger {record.trigger} does not exist")
        log = self.improvements()
        ordinal = len(log) + 1
        log.append(record.model_copy(update={"ordinal": ordinal}))
        self.write_json(self.IMPROVEMENT_LOG, [r.to_dict() for r in log])
        return ordinal

    # -- audit queue -------------------------------------------------------

    QUEUE = "audit/queue.json"

    def audit_queue(self) -> AuditQueue:
        if not self.exists(self.QUEUE):
            return AuditQueue()
        return AuditQueue.loads(self.read_text(self.QUEUE))

    def save_audit_queue(self, queue: AuditQueue) -> None:
        self.write_text(self.QUEUE, queue.dumps())

    # -- inspection --------------------------------------------------------

    def tree(self) -> dict[str, bytes]:
        """Every file under the root except the lock file, keyed by relative path."""
        out = {}
        for p in sorted(self.root.rglob("*")):
            if p.is_file() and p.name != LOCK_NAME:
                out[p.relative_to(self.root).as_posix()] = p.read_bytes()
        return out
