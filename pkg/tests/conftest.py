from __future__ import annotations

import pytest

from faultharness.bank import load_shipped_bank
from faultharness.agents import TaskStep, make_policy
from faultharness.episode import InjectionPlan
from faultharness.metrics import grade_episode
from faultharness.simulator import (
    SimConfig,
    ToolRegistry,
    ToolSpec,
    canonical_call_key,
    run_episode,
)
from faultharness.tasks import builtin_task_pool
from faultharness.taxonomy import CATALOG, Manifestation


@pytest.fixture(scope="session")
def bank():
    return load_shipped_bank()


@pytest.fixture(scope="session")
def tasks():
    return builtin_task_pool()


def make_registry(payload: str = '{"answer":7,"unit":"days"}', with_backup: bool = True):
    """Single-step echo-style tool registry for constructed scenarios."""
    args = {"q": "x"}
    tools = [
        ToolSpec(
            name="lookup",
            description="Primary lookup source.",
            parameters={"q": {"type": "string", "required": True}},
            scripted_responses={canonical_call_key("lookup", args): payload},
            capability="lookup",
        )
    ]
    if with_backup:
        tools.append(
            ToolSpec(
                name="lookup_backup",
                description="Backup lookup source.",
                parameters={"q": {"type": "string", "required": True}},
                scripted_responses={canonical_call_key("lookup_backup", args): payload},
                capability="lookup",
            )
        )
    return ToolRegistry(tools=tuple(tools)), (TaskStep(tool="lookup", arguments=args),)


def run_simple(
    agent_name: str,
    kind: str | None,
    plan_seed: int = 1,
    bank=None,
    with_backup: bool = True,
    config: SimConfig | None = None,
    payload: str = '{"answer":7,"unit":"days"}',
):
    """One constructed single-step episode with an optional injected kind."""
    registry, steps = make_registry(payload=payload, with_backup=with_backup)
    if kind is None:
        plan = InjectionPlan(seed=plan_seed)
    else:
        plan = InjectionPlan(
            seed=plan_seed,
            kind=kind,
            manifestation=CATALOG[kind].default_manifestation,
            turn_index=1,
        )
    policy = make_policy(agent_name, steps=steps)
    traj = run_episode(
        prompt="Look up x and report the answer.",
        tools=registry,
        agent=policy,
        plan=plan,
        config=config or SimConfig(),
        bank=bank,
    )
    return traj, registry, steps
