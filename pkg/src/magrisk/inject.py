"""Red-team perturbations applied while a scenario runs.

Triggers see only the committed event prefix, never the current step's
pending events. Perturbations are evaluated in list order, so a given
``(scenario, seed)`` always perturbs the same way.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

from magrisk.core.events import Event, EventKind, Message
from magrisk.core.scenario import (
    ContradictObjective,
    CorruptMessage,
    DeadlinePressure,
    DisableTool,
    DropChannel,
    InsertAgent,
    PerturbationSpec,
    ScenarioSpec,
    Trigger,
    WithholdEnvKeys,
)
from magrisk.core.topology import TopologyKind


class InjectionError(ValueError):
    pass


def trigger_holds(trigger: Trigger, step: int, committed: Sequence[Event]) -> bool:
    if trigger.at_step is not None and step != trigger.at_step:
        return False
    if trigger.from_step is not None and step < trigger.from_step:
        return False
    if trigger.message_contains is None and trigger.message_from is None:
        return True
    for e in committed:
        if e.kind is not EventKind.MESSAGE_SENT:
            continue
        m = e.data["message"]
        if trigger.message_from is not None and m["from"] != trigger.message_from:
            continue
        if trigger.message_contains is not None and trigger.message_contains.lower() not in m["content"].lower():
            continue
        return True
    return False


@dataclass
class Firing:
    """One perturbation firing, later recorded as an InjectionFired event."""

    label: str
    action: str
    step: int
    details: dict = field(default_factory=dict)

    def to_data(self) -> dict:
        return {"label": self.label, "action": self.action, **self.details}


@dataclass
class InjectionState:
    """Mutable per-run effects of fired perturbations."""

    known_agents: set[str] = field(default_factory=set)
    fired: set[str] = field(default_factory=set)
    armed: list[PerturbationSpec] = field(default_factory=list)
    cuts: dict[tuple[str, str], tuple[int, str]] = field(default_factory=dict)  # -> (until, label)
    disabled: dict[str, dict[str, int]] = field(default_factory=dict)  # agent -> tag -> until
    withheld: dict[str, set[str]] = field(default_factory=dict)
    objectives: dict[str, str] = field(default_factory=dict)
    horizon: int | None = None
    inserted: list = field(default_factory=list)

    def channel_cut(self, sender: str, recipient: str, step: int) -> str | None:
        hit = self.cuts.get((sender, recipient))
        if hit is not None and step < hit[0]:
            return hit[1]
        return None

    def disabled_tools(self, agent: str, step: int) -> frozenset[str]:
        return frozenset(t for t, until in self.disabled.get(agent, {}).items() if step < until)


def _check_agent(state: InjectionState, agent: str, label: str) -> None:
    if state.known_agents and agent not in state.known_agents:
        raise InjectionError(f"perturbation {label!r} references unknown agent {agent!r}")


def arm_injections(
    specs: Sequence[PerturbationSpec],
    step: int,
    committed: Sequence[Event],
    state: InjectionState,
    rng_for=None,
) -> list[Firing]:
    """Evaluate triggers and activate non-message effects.

    ``rng_for(label)`` returns the stream used for probabilistic firing.
    CorruptMessage perturbations are only armed here; they fire when a
    matching message is pending (see :func:`corrupt_pending`).
    """
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise InjectionError("perturbation labels must be unique")
    firings = []
    for spec in specs:
        if spec.label in state.fired and not spec.repeating:
            continue
        if any(a.label == spec.label for a in state.armed):
            continue
        if not trigger_holds(spec.trigger, step, committed):
            continue
        if spec.probability < 1.0:
            rng = rng_for(spec.label) if rng_for else random.Random(0)
            if rng.random() >= spec.probability:
                continue
        act = spec.action
        if isinstance(act, CorruptMessage):
            for who in (act.sender, act.recipient):
                if who is not None:
                    _check_agent(state, who, spec.label)
            state.armed.append(spec)
            continue
        details: dict[str, Any] = {}
        if isinstance(act, DropChannel):
            _check_agent(state, act.sender, spec.label)
            _check_agent(state, act.recipient, spec.label)
            state.cuts[(act.sender, act.recipient)] = (step + act.duration, spec.label)
            details = {"from": act.sender, "to": act.recipient, "until": step + act.duration}
        elif isinstance(act, DisableTool):
            _check_agent(state, act.agent, spec.label)
            state.disabled.setdefault(act.agent, {})[act.task_tag] = step + act.duration
            details = {"agent": act.agent, "task": act.task_tag, "until": step + act.duration}
        elif isinstance(act, WithholdEnvKeys):
            _check_agent(state, act.agent, spec.label)
            state.withheld.setdefault(act.agent, set()).update(act.keys)
            details = {"agent": act.agent, "keys": sorted(act.keys)}
        elif isinstance(act, ContradictObjective):
            _check_agent(state, act.agent, spec.label)
            state.objectives[act.agent] = act.objective
            details = {"agent": act.agent, "objective": act.objective}
        elif isinstance(act, DeadlinePressure):
            state.horizon = act.horizon
            details = {"horizon": act.horizon}
        elif isinstance(act, InsertAgent):
            if act.agent.name in state.known_agents:
                raise InjectionError(f"perturbation {spec.label!r} inserts duplicate agent {act.agent.name!r}")
            state.known_agents.add(act.agent.name)
            state.inserted.append(act.agent)
            details = {"agent": act.agent.name}
        state.fired.add(spec.label)
        firings.append(Firing(spec.label, act.type, step, details))
    return firings


def _matches(act: CorruptMessage, m: Message) -> bool:
    if act.sender is not None and m.sender != act.sender:
        return False
    if act.recipient is not None and act.recipient not in m.to:
        return False
    if act.regex:
        return re.search(act.find, m.content) is not None
    return act.find in m.content


def corrupt_pending(
    state: InjectionState, step: int, pending: Sequence[Message]
) -> tuple[list[Message], list[tuple[int, Firing]]]:
    """Rewrite pending messages for every armed CorruptMessage.

    Returns the new message list and ``(index, firing)`` pairs naming the
    message each firing altered. Altered messages carry the perturbation's
    label as taint.
    """
    out = list(pending)
    firings: list[tuple[int, Firing]] = []
    still_armed = []
    for spec in state.armed:
        act: CorruptMessage = spec.action
        hits = [i for i, m in enumerate(out) if _matches(act, m)]
        if not hits:
            still_armed.append(spec)
            continue
        for i in hits:
            m = out[i]
            if act.regex:
                new_content = re.sub(act.find, act.replace, m.content)
            else:
                new_content = m.content.replace(act.find, act.replace)
            out[i] = replace(m, content=new_content, taint=m.taint | {spec.label})
            details = {"from": m.sender, "to": sorted(m.to), "original": m.content, "corrupted": new_content}
            firings.append((i, Firing(spec.label, act.type, step, details)))
        state.fired.add(spec.label)
        if spec.repeating:
            still_armed.append(spec)
    state.armed = still_armed
    return out, firings


def apply_injections(
    specs: Sequence[PerturbationSpec],
    step: int,
    pending: Sequence[Message],
    committed: Sequence[Event] = (),
    state: InjectionState | None = None,
    rng_for=None,
) -> tuple[list[Message], list[Firing], InjectionState]:
    """Arm, activate and apply perturbations for one step in one call."""
    state = state if state is not None else InjectionState()
    firings = arm_injections(specs, step, committed, state, rng_for)
    messages, corrupted = corrupt_pending(state, step, pending)
    return messages, firings + [f for _, f in corrupted], state


def insert_edges(kind: TopologyKind, new_agent: str, agents: Sequence[str], hub: str | None) -> set[tuple[str, str]]:
    """Default channels for an inserted agent: a spoke in a star, full links otherwise."""
    if kind is TopologyKind.ORCHESTRATOR and hub is not None:
        return {(hub, new_agent), (new_agent, hub)}
    others = [a for a in agents if a != new_agent]
    return {(new_agent, a) for a in others} | {(a, new_agent) for a in others}


INSERT_EDGE_POLICY = {
    TopologyKind.SINGLE_AGENT: "full",
    TopologyKind.ORCHESTRATOR: "spoke",
    TopologyKind.SWARM: "full",
    TopologyKind.TASK_FORCE: "full",
}


# -- sweeps ------------------------------------------------------------------


@dataclass
class SweepPoint:
    value: Any
    ensemble: Any  # EnsembleResult


def with_axis_value(spec: ScenarioSpec, label: str, field_name: str, value: Any) -> ScenarioSpec:
    """Copy of ``spec`` with one perturbation parameter set to ``value``.

    ``field_name`` is an action field (``duration``, ``horizon``, ...) or
    ``probability``. A duration of 0 removes the perturbation, which is how
    a sweep includes the unperturbed baseline.
    """
    injections = []
    found = False
    for inj in spec.injections:
        if inj.label != label:
            injections.append(inj)
            continue
        found = True
        if field_name == "probability":
            injections.append(replace(inj, probability=float(value)))
        elif field_name == "duration" and value == 0:
            continue
        else:
            if not hasattr(inj.action, field_name):
                raise InjectionError(f"{inj.action.type} has no parameter {field_name!r}")
            injections.append(replace(inj, action=replace(inj.action, **{field_name: value})))
    if not found:
        raise InjectionError(f"no perturbation labelled {label!r}")
    return spec.with_injections(injections)


def sweep(
    spec: ScenarioSpec,
    label: str,
    field_name: str,
    values: Sequence[Any],
    n: int,
    seed_base: int = 0,
    jobs: int = 1,
) -> list[SweepPoint]:
    """One ensemble per parameter value, all sharing the same seeds."""
    from magrisk.engine import run_ensemble

    values = list(values)
    return [
        SweepPoint(v, run_ensemble(with_axis_value(spec, label, field_name, v), n=n, seed_base=seed_base, jobs=jobs))
        for v in values
    ]
