"""Bundled demo definitions. Demos are documents, not code, so loading one
exercises the same parser as user-supplied files."""

from __future__ import annotations

from importlib import resources

from .definition import FsmDefinition, parse

DEMO_NAMES = ("fig1", "long-wait", "minimal", "remote-call")


def list_demos() -> list[str]:
    return list(DEMO_NAMES)


def demo_text(name: str) -> str:
    if name not in DEMO_NAMES:
        raise KeyError(f"unknown demo {name!r}; available: {', '.join(DEMO_NAMES)}")
    return resources.files(__package__).joinpath("demos", f"{name}.json").read_text("utf-8")


def demo_definition(name: str) -> FsmDefinition:
    return parse(demo_text(name))
