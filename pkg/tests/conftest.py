"""Shared fixtures: a small policy and a fixed prompt."""

from __future__ import annotations

import pytest

from shortcot_lab.core.env import ObjectRequest, PromptSpec, encode_prompt
from shortcot_lab.core.policy import PolicyParams
from tests.helpers import small_policy


@pytest.fixture
def spec() -> PromptSpec:
    return PromptSpec("p0", "colors", (ObjectRequest("cup", "red"),))


@pytest.fixture
def prompt(spec: PromptSpec) -> tuple[int, ...]:
    return encode_prompt(spec)


@pytest.fixture
def params() -> PolicyParams:
    return small_policy(0, scale=20.0)
