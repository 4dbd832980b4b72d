from __future__ import annotations

import pytest
from hypothesis import given, settings

from appforge.model import Artifact
from tests.strategies import ALL


def assert_round_trip(instance: Artifact) -> None:
    text = instance.dumps()
    again = type(instance).loads(text)
    assert again == instance
    assert again.dumps() == text


@pytest.mark.parametrize("type_name", sorted(ALL))
def test_serialize_parse_identity(type_name):
    @settings(max_examples=40, deadline=None)
    @given(ALL[type_name])
    def check(instance):
        assert_round_trip(instance)

    check()


def test_every_artifact_subclass_has_a_strategy():
    import appforge.backends  # noqa: F401
    import appforge.copa  # noqa: F401
    import appforge.orchestrator  # noqa: F401
    import appforge.scenario  # noqa: F401
    import appforge.toolchain  # noqa: F401

    def subclasses(cls):
        for sub in cls.__subclasses__():
            yield sub
            yield from subclasses(sub)

    missing = {c.__name__ for c in subclasses(Artifact)} - set(ALL) - {"QualityIssue"}
    assert not missing
