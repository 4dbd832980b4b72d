from __future__ import annotations

import json
import random

import pytest

from appforge.errors import PillarError
from appforge.kb import PILLARS, KnowledgeBase, tokenize
from appforge.model import KnowledgeDoc


def doc(i: str, corpus="coding", pillar="API Library", keywords=()):
    return KnowledgeDoc(id=i, corpus=corpus, pillar=pillar, keywords=tuple(keywords))


class TestIngest:
    def test_pillar_must_match_corpus(self):
        with pytest.raises(PillarError):
            KnowledgeBase().ingest(doc("a", corpus="testing", pillar="API Library"))

    def test_every_pillar_accepted(self):
        kb = KnowledgeBase()
        for corpus, pillars in PILLARS.items():
            for p in pillars:
                kb.ingest(doc(f"{corpus}-{p}", corpus=corpus, pillar=p))
        assert len(kb) == sum(len(p) for p in PILLARS.values())

    def test_load_pack_accepts_single_and_list(self, tmp_path):
        (tmp_path / "one.json").write_text(doc("x", keywords=["k"]).dumps())
        (tmp_path / "many.json").write_text(json.dumps([doc("y").to_dict(), doc("z").to_dict()]))
        assert len(KnowledgeBase.load_pack(tmp_path)) == 3


class TestQuery:
    def test_zero_overlap_excluded(self):
        kb = KnowledgeBase([doc("a", keywords=["x"])])
        assert kb.query("coding", ["y"]) == []

    def test_order_matches_sort_oracle(self):
        rng = random.Random(2)
        vocab = [f"w{i}" for i in range(8)]
        for _ in range(40):
            docs = [doc(f"d{i:02d}", keywords=rng.sample(vocab, rng.randint(0, 4))) for i in range(12)]
            kb = KnowledgeBase(docs)
            words = set(rng.sample(vocab, 3))
            k = rng.randint(1, 6)
            scored = [(-len(words & set(d.keywords)), d.id) for d in docs if words & set(d.keywords)]
            expected = [i for _, i in sorted(scored)[:k]]
            assert [d.id for d in kb.query("coding", words, k=k)] == expected

    def test_pillar_filter_and_case(self):
        kb = KnowledgeBase([doc("a", keywords=["JavaFX"]), doc("b", pillar="Coding Tools", keywords=["javafx"])])
        assert [d.id for d in kb.query("coding", ["JAVAFX"], pillar="Coding Tools")] == ["b"]

    def test_k_positive(self):
        with pytest.raises(ValueError):
            KnowledgeBase().query("coding", ["a"], k=0)


def test_tokenize():
    assert tokenize("lib:JavaFX Graphics@>=17") == {"lib", "javafx", "graphics", "17"}
