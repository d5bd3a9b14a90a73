from __future__ import annotations

import os

import pytest
from hypothesis import HealthCheck, settings

from magrisk.core.scenario import AgentDecl, BehaviorKind, BehaviorSpec, EnvironmentDecl, Milestone, ScenarioSpec
from magrisk.core.topology import ProtocolConfig, TopologySpec

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def scripted(*rules, **extra) -> BehaviorSpec:
    return BehaviorSpec(BehaviorKind.SCRIPTED, {"rules": list(rules), **extra})


def echo_pair(horizon: int = 4, rounds: int = 3) -> ScenarioSpec:
    """``a`` pings ``b`` at step 0; ``b`` echoes whatever it hears back to the sender."""
    a = scripted({"when": {"step": 0}, "then": {"say": [{"to": "b", "content": "ping"}]}})
    b = scripted({"when": {"any_message": True}, "then": {"say": [{"to": "sender", "content": "{content}"}]}})
    return ScenarioSpec(
        name="echo-pair",
        topology=TopologySpec.task_force(("a", "b")),
        agents=(AgentDecl("a", a), AgentDecl("b", b)),
        protocol=ProtocolConfig(rounds=rounds),
        environment=EnvironmentDecl("static"),
        horizon=horizon,
    )


def coin_spec(p: float = 0.5, horizon: int = 2) -> ScenarioSpec:
    """One agent attempts a task once; the run fails iff the capability draw fails."""
    behaviour = BehaviorSpec(
        BehaviorKind.TABLE_STOCHASTIC,
        {
            "capabilities": {"coin": p},
            "tasks": [
                {
                    "tag": "coin",
                    "step": 0,
                    "success": {"act": {"label": "win"}},
                    "failure": {"act": {"label": "lose"}},
                }
            ],
        },
    )
    env = EnvironmentDecl(
        "ledger",
        {"initial": {"won": False}, "actions": {"win": [{"op": "set", "key": "won", "value": True}]}},
    )
    return ScenarioSpec(
        name="coin",
        topology=TopologySpec.single("solo"),
        agents=(AgentDecl("solo", behaviour),),
        protocol=ProtocolConfig(rounds=1),
        environment=env,
        milestones=(Milestone("won", "won"),),
        horizon=horizon,
    )


def chatter_swarm(n_agents: int = 3, rounds: int = 3) -> ScenarioSpec:
    """Every agent broadcasts a random opinion each step."""
    names = [f"s{i}" for i in range(n_agents)]
    beh = BehaviorSpec(
        BehaviorKind.TABLE_STOCHASTIC,
        {
            "capabilities": {"default": 0.5},
            "rules": [{"when": {}, "then": {"say": [{"to": "*", "content": {"choice": ["yes", "no", "maybe"]}}]}}],
        },
    )
    return ScenarioSpec(
        name="chatter",
        topology=TopologySpec.swarm(names),
        agents=tuple(AgentDecl(n, beh) for n in names),
        protocol=ProtocolConfig(rounds=rounds),
        environment=EnvironmentDecl("static"),
        horizon=rounds,
    )


@pytest.fixture
def echo_spec() -> ScenarioSpec:
    return echo_pair()


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
