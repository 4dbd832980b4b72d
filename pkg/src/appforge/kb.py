"""Knowledge store with exact keyword-overlap retrieval."""

from __future__ import annotations

import json
import re
import threading
from collections.abc import Iterable
from pathlib import Path
from typing import Optional

from appforge.errors import PillarError
from appforge.model import KnowledgeDoc

PILLARS: dict[str, frozenset[str]] = {
    "srs-add": frozenset({"SRSs", "ADDs", "Standards"}),
    "coding": frozenset({
        "Open Source Projects", "API Library", "Domain Experts",
        "Coding Standards", "Coding Tools",
    }),
    "testing": frozenset({
        "Testing Projects", "Testing Criteria", "Testing Standards", "Testing Tools",
    }),
}

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> set[str]:
    return set(_TOKEN.findall(text.lower()))


class KnowledgeBase:
    def __init__(self, docs: Iterable[KnowledgeDoc] = ()) -> None:
        self._docs: dict[str, KnowledgeDoc] = {}
        self._lock = threading.Lock()
        for doc in docs:
            self.ingest(doc)

    def __len__(self) -> int:
        return len(self._docs)

    def ingest(self, doc: KnowledgeDoc) -> str:
        if doc.pillar not in PILLARS.get(doc.corpus, ()):
            raise PillarError(f"pillar {doc.pillar!r} does not belong to corpus {doc.corpus!r}")
        with self._lock:
            self._docs[doc.id] = doc
        return doc.id

    def get(self, doc_id: str) -> KnowledgeDoc:
        return self._docs[doc_id]

    def query(
        self,
        corpus: str,
        keywords: Iterable[str],
        k: int = 5,
        pillar: Optional[str] = None,
    ) -> list[KnowledgeDoc]:
        """Up to ``k`` docs with at least one keyword hit, best overlap first.

        Ties are broken by ascending doc id.
        """
        if k < 1:
            raise ValueError("k must be positive")
        wanted = {w.lower() for w in keywords}
        with self._lock:
            snapshot = list(self._docs.values())
        scored = []
        for doc in snapshot:
            if doc.corpus != corpus or (pillar is not None and doc.pillar != pillar):
                continue
            overlap = len(wanted & {w.lower() for w in doc.keywords})
            if overlap:
                scored.append((-overlap, doc.id, doc))
        scored.sort(key=lambda t: (t[0], t[1]))
        return [doc for _, _, doc in scored[:k]]

    @classmethod
    def load_pack(cls, directory: str | Path) -> KnowledgeBase:
        """Load every ``*.json`` file in ``directory``; a file may hold one doc or a list."""
        kb = cls()
        for path in sorted(Path(directory).glob("*.json")):
            data = json.loads(path.read_text(encoding="utf-8"))
            for item in data if isinstance(data, list) else [data]:
                kb.ingest(KnowledgeDoc.parse(item))
        return kb
