from __future__ import annotations

from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import chatter_swarm, coin_spec, echo_pair, scripted
from magrisk.core.events import EventKind, Message, trace_digest
from magrisk.core.scenario import (
    AgentDecl,
    ContradictObjective,
    CorruptMessage,
    DeadlinePressure,
    DisableTool,
    DropChannel,
    EnvironmentDecl,
    InsertAgent,
    PerturbationSpec,
    ScenarioSpec,
    Trigger,
    WithholdEnvKeys,
)
from magrisk.core.topology import ProtocolConfig, TopologyKind, TopologySpec
from magrisk.engine.runner import RunStatus, run_once
from magrisk.inject import (
    InjectionError,
    InjectionState,
    apply_injections,
    insert_edges,
    sweep,
    trigger_holds,
    with_axis_value,
)


def test_empty_injection_list_is_identity():
    spec = chatter_swarm()
    same = spec.with_injections([])
    for seed in range(10):
        assert trace_digest(run_once(spec, seed).trace) == trace_digest(run_once(same, seed).trace)


def test_drop_channel_cuts_only_that_direction():
    spec = chatter_swarm(3, 4).with_injections(
        [PerturbationSpec("cut", DropChannel("s0", "s1", duration=10), Trigger(at_step=0))]
    )
    trace = run_once(spec, 1).trace
    for e in trace.of_kind(EventKind.MESSAGE_SENT):
        m = e.message
        assert not (m.sender == "s0" and "s1" in m.to)
    drops = [e for e in trace.of_kind(EventKind.MESSAGE_DROPPED) if e.data["reason"] == "channel-cut"]
    assert drops and all(e.data["label"] == "cut" for e in drops)
    assert any(e.message.sender == "s1" and "s0" in e.message.to for e in trace.of_kind(EventKind.MESSAGE_SENT))


def test_drop_channel_expires_after_duration():
    spec = chatter_swarm(2, 4).with_injections(
        [PerturbationSpec("cut", DropChannel("s0", "s1", duration=2), Trigger(at_step=0))]
    )
    trace = run_once(spec, 1).trace
    delivered = {e.step for e in trace.of_kind(EventKind.MESSAGE_SENT) if e.message.sender == "s0"}
    assert delivered == {2, 3}


def test_corrupt_message_rewrites_and_taints():
    spec = echo_pair().with_injections(
        [PerturbationSpec("typo", CorruptMessage("ping", "pong", sender="a"), Trigger(at_step=0))]
    )
    trace = run_once(spec, 0).trace
    sent = [e.message for e in trace.of_kind(EventKind.MESSAGE_SENT)]
    assert sent[0].content == "pong" and "typo" in sent[0].taint
    # the echo inherits the taint through b's context
    assert sent[1].content == "pong" and "typo" in sent[1].taint
    fired = next(trace.of_kind(EventKind.INJECTION_FIRED))
    assert fired.data["original"] == "ping" and fired.data["corrupted"] == "pong"


def test_regex_corruption():
    msgs = [Message(0, "a", ("b",), "stable; still fragile")]
    spec = PerturbationSpec("q", CorruptMessage(r";.*$", ".", regex=True), Trigger(at_step=0))
    out, firings, _ = apply_injections([spec], 0, msgs)
    assert out[0].content == "stable." and firings[0].label == "q"


def test_trigger_on_message_content():
    from magrisk.core.events import Event

    committed = [Event(0, 0, EventKind.MESSAGE_SENT, {"message": Message(0, "a", ("b",), "GO now").to_dict()})]
    assert trigger_holds(Trigger(message_contains="go"), 1, committed)
    assert not trigger_holds(Trigger(message_contains="stop"), 1, committed)
    assert not trigger_holds(Trigger(message_from="b"), 1, committed)
    assert not trigger_holds(Trigger(at_step=2), 1, committed)


def test_duplicate_labels_rejected():
    spec = PerturbationSpec("x", DeadlinePressure(3))
    with pytest.raises(InjectionError):
        apply_injections([spec, spec], 0, [])


def test_unknown_agent_rejected():
    state = InjectionState(known_agents={"a", "b"})
    with pytest.raises(InjectionError):
        apply_injections([PerturbationSpec("x", DropChannel("a", "ghost"))], 0, [], state=state)


def test_disable_tool_forces_capability_failure():
    spec = coin_spec(1.0).with_injections(
        [PerturbationSpec("outage", DisableTool("solo", "coin", 5), Trigger(at_step=0))]
    )
    assert run_once(coin_spec(1.0), 0).status is RunStatus.SUCCESS
    assert run_once(spec, 0).status is not RunStatus.SUCCESS


def test_deadline_pressure_shortens_horizon():
    spec = echo_pair(horizon=6, rounds=6).with_injections(
        [PerturbationSpec("rush", DeadlinePressure(2), Trigger(at_step=0))]
    )
    result = run_once(spec, 0)
    assert result.status is RunStatus.HORIZON_EXCEEDED
    assert result.trace.events[-1].step <= 2


def _env_reader(key: str) -> ScenarioSpec:
    reader = scripted({"when": {"env": {key: True}}, "then": {"act": {"label": "saw"}}})
    return ScenarioSpec(
        "reader",
        TopologySpec.single("r"),
        (AgentDecl("r", reader, "Watch the flag."),),
        ProtocolConfig(rounds=1),
        EnvironmentDecl("ledger", {"initial": {key: True}}),
        horizon=1,
    )


def test_withhold_env_keys_hides_state():
    spec = _env_reader("flag")
    hidden = spec.with_injections([PerturbationSpec("blind", WithholdEnvKeys("r", ("flag",)), Trigger(at_step=0))])
    assert list(run_once(spec, 0).trace.of_kind(EventKind.ACTION_TAKEN))
    assert not list(run_once(hidden, 0).trace.of_kind(EventKind.ACTION_TAKEN))


def test_contradict_objective_changes_behaviour():
    beh = scripted({"when": {"objective_contains": "sabotage"}, "then": {"act": {"label": "sabotage"}}})
    spec = ScenarioSpec("obj", TopologySpec.single("r"), (AgentDecl("r", beh, "Help."),), ProtocolConfig(),
                        EnvironmentDecl("static"), horizon=1)
    flipped = spec.with_injections([PerturbationSpec("evil", ContradictObjective("r", "sabotage"), Trigger(at_step=0))])
    assert not list(run_once(spec, 0).trace.of_kind(EventKind.ACTION_TAKEN))
    acts = list(run_once(flipped, 0).trace.of_kind(EventKind.ACTION_TAKEN))
    assert acts[0].data["action"]["label"] == "sabotage"


def test_insert_agent_joins_task_force():
    newcomer = AgentDecl("n", scripted({"when": {}, "then": {"say": [{"to": "*", "content": "hello"}]}}))
    spec = echo_pair().with_injections([PerturbationSpec("join", InsertAgent(newcomer), Trigger(at_step=1))])
    trace = run_once(spec, 0).trace
    hello = [e.message for e in trace.of_kind(EventKind.MESSAGE_SENT) if e.message.sender == "n"]
    assert hello and set(hello[0].to) == {"a", "b"}
    assert trace.meta["insert_edge_policy"]


@pytest.mark.parametrize("kind", [TopologyKind.ORCHESTRATOR, TopologyKind.SWARM, TopologyKind.TASK_FORCE])
def test_insert_edges_policy(kind):
    edges = insert_edges(kind, "n", ["h", "x"], "h")
    if kind is TopologyKind.ORCHESTRATOR:
        assert edges == {("n", "h"), ("h", "n")}
    else:
        assert edges == {("n", "h"), ("h", "n"), ("n", "x"), ("x", "n")}


def test_probability_zero_never_fires():
    spec = chatter_swarm().with_injections(
        [PerturbationSpec("maybe", DropChannel("s0", "s1", 5), Trigger(at_step=0), probability=0.0)]
    )
    for seed in range(20):
        assert not list(run_once(spec, seed).trace.of_kind(EventKind.INJECTION_FIRED))


def test_sweep_over_duration_yields_one_point_per_value():
    spec = chatter_swarm(2, 3).with_injections(
        [PerturbationSpec("cut", DropChannel("s0", "s1", 1), Trigger(at_step=0))]
    )
    points = sweep(spec, "cut", "duration", [0, 1, 2, 3], n=3)
    assert [p.value for p in points] == [0, 1, 2, 3]
    assert all(p.ensemble.n == 3 for p in points)
    assert with_axis_value(spec, "cut", "duration", 0).injections == ()


def test_sweep_rejects_unknown_label_or_field():
    spec = chatter_swarm(2, 3).with_injections([PerturbationSpec("cut", DropChannel("s0", "s1", 1))])
    with pytest.raises(InjectionError):
        with_axis_value(spec, "nope", "duration", 1)
    with pytest.raises(InjectionError):
        with_axis_value(spec, "cut", "bogus", 1)


@given(st.integers(min_value=0, max_value=2**32))
def test_full_horizon_drop_delivers_nothing_on_channel(seed):
    base = chatter_swarm(3, 3)
    spec = base.with_injections([PerturbationSpec("cut", DropChannel("s2", "s0", base.horizon + 1), Trigger(at_step=0))])
    trace = run_once(spec, seed).trace
    assert not any(e.message.sender == "s2" and "s0" in e.message.to for e in trace.of_kind(EventKind.MESSAGE_SENT))


def test_injections_do_not_shift_unrelated_randomness():
    base = chatter_swarm(3, 3)
    spec = replace(base, injections=(PerturbationSpec("late", DeadlinePressure(99), Trigger(at_step=50)),))
    a = [e.message.content for e in run_once(base, 4).trace.of_kind(EventKind.MESSAGE_SENT)]
    b = [e.message.content for e in run_once(spec, 4).trace.of_kind(EventKind.MESSAGE_SENT)]
    assert a == b
