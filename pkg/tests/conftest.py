"""Shared test fixtures: profiles, runtimes, and scripted backends."""

from __future__ import annotations

import json

import pytest

from ctgcrew.ledger import Ledger
from ctgcrew.model import ControlCondition, LogicalClock, TaskKind, TaskSpec
from ctgcrew.providers import (
    AgentProfile,
    BackendConfig,
    BackendKind,
    ProviderRuntime,
    Role,
)

MOCK_BACKEND = BackendConfig(kind=BackendKind.MOCK)


def make_profile(
    agent_id: str,
    role: Role,
    seed: int = 0,
    system_prompt: str = "",
    backend: BackendConfig = MOCK_BACKEND,
    temperature: float = 0.0,
) -> AgentProfile:
    return AgentProfile(
        agent_id=agent_id,
        role=role,
        backend=backend,
        system_prompt=system_prompt,
        temperature=temperature,
        seed=seed,
    )


def make_conditions(*dims: str, weight: float = 1.0) -> tuple[ControlCondition, ...]:
    return tuple(
        ControlCondition(dimension_id=d, description=f"requirement for {d}", severity_weight=weight)
        for d in dims
    )


def make_task(
    conditions=None,
    kind: TaskKind = TaskKind.TOXICITY_MITIGATION,
    text: str = "The road ahead is blocked.",
    **kw,
) -> TaskSpec:
    return TaskSpec(
        task_id="task-1",
        kind=kind,
        original_input=text,
        control_conditions=conditions or make_conditions("tone", "facts"),
        **kw,
    )


def write_rules(tmp_path, rules: dict) -> str:
    path = tmp_path / "rules.json"
    path.write_text(json.dumps(rules), encoding="utf-8")
    return str(path)


@pytest.fixture
def mem_ledger() -> Ledger:
    return Ledger(clock=LogicalClock())


@pytest.fixture
def runtime(mem_ledger) -> ProviderRuntime:
    return ProviderRuntime(ledger=mem_ledger)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance criterion verdicts after the test summary."""
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
