"""Deterministic step loop.

Step ``t`` proceeds as:

1. perturbation triggers are evaluated against the committed trace;
2. while ``t < rounds``, each agent (in protocol order) reads the messages
   sent to it at ``t - 1`` plus its environment view, and decides;
3. armed message corruptions rewrite the step's outgoing messages;
4. messages are delivered (or dropped) for reading at ``t + 1``;
5. the environment applies all actions, then milestones are checked.

Taint: an agent that reads a tainted message or a tainted environment key
becomes tainted, and everything it emits afterwards carries the label.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

from magrisk.agents import (
    BROADCAST,
    AgentError,
    AgentMemory,
    Observation,
    agent_rng,
    decide,
    respond,
    truncate_context,
)
from magrisk.core.events import Event, EventKind, Message, MessageKind, Trace, TraceError, canonical_json
from magrisk.core.scenario import HORIZON_BELOW_ROUNDS, ScenarioSpec, Violation, validate
from magrisk.core.topology import Aggregation, CommModel, Ordering, UnknownAgentError
from magrisk.engine.environment import make_environment
from magrisk.inject import INSERT_EDGE_POLICY, InjectionState, arm_injections, corrupt_pending, insert_edges

log = logging.getLogger(__name__)

_K = EventKind


class RunStatus(str, Enum):
    SUCCESS = "Success"
    FAILURE = "Failure"
    HORIZON_EXCEEDED = "HorizonExceeded"


class ScenarioInvalid(ValueError):
    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__("; ".join(map(str, violations)))


class ReplayError(RuntimeError):
    pass


class DigestMismatch(ReplayError):
    pass


class Divergence(ReplayError):
    def __init__(self, index: int, expected: Any, actual: Any):
        self.index = index
        self.expected = expected
        self.actual = actual
        super().__init__(f"trace diverges at event {index}")


class ProbeError(ValueError):
    pass


@dataclass
class RunResult:
    trace: Trace
    status: RunStatus
    milestones_hit: dict[str, int] = field(default_factory=dict)
    taint_report: dict[str, dict[str, int]] = field(default_factory=dict)
    reason: str = ""

    @property
    def seed(self) -> int:
        return self.trace.seed

    @property
    def success(self) -> bool:
        return self.status is RunStatus.SUCCESS


class Simulation:
    """A single run, advanced one step at a time."""

    def __init__(self, spec: ScenarioSpec, seed: int):
        problems = [v for v in validate(spec) if v.code != HORIZON_BELOW_ROUNDS]
        if problems:
            raise ScenarioInvalid(problems)
        self.spec = spec
        self.seed = int(seed)
        self.env = make_environment(spec.environment.name, spec.environment.params)
        self.state = self.env.initial_state()
        self.key_taint: dict[str, frozenset] = {}
        self.key_depth: dict[tuple[str, str], int] = {}
        self.decls = {a.name: a for a in spec.agents}
        self.order = [a.name for a in spec.agents]
        self.edges = set(spec.topology.edges)
        self.memory = {a.name: AgentMemory(capacity=a.memory_capacity) for a in spec.agents}
        self.taint: dict[str, dict[str, tuple[int, int]]] = {a: {} for a in self.order}
        self.inbox: dict[str, list[Message]] = {a: [] for a in self.order}
        self.inj = InjectionState(known_agents=set(self.order))
        self.milestones_hit: dict[str, int] = {}
        self.trace = Trace(
            spec.digest(),
            self.seed,
            meta={
                "scenario": spec.name,
                "rounds": spec.protocol.rounds,
                "horizon": spec.horizon,
                "insert_edge_policy": INSERT_EDGE_POLICY[spec.topology.kind],
            },
        )
        self.t = 0
        self._seq = 0
        self.status: RunStatus | None = None
        self.reason = ""

    # -- helpers -----------------------------------------------------------

    @property
    def horizon(self) -> int:
        return self.inj.horizon if self.inj.horizon is not None else self.spec.horizon

    def _commit(self, step: int, pending: list[tuple[EventKind, dict]]) -> None:
        for kind, data in pending:
            self.trace.append(Event(step, self._seq, kind, data))
            self._seq += 1
        pending.clear()

    def _end(self, step: int, status: RunStatus, reason: str) -> None:
        data: dict[str, Any] = {
            "status": status.value,
            "reason": reason,
            "milestones": dict(self.milestones_hit),
        }
        agg = self._aggregate()
        if agg is not None:
            data["aggregate"] = agg
        self._commit(step, [(_K.RUN_ENDED, data)])
        self.status = status
        self.reason = reason

    def _aggregate(self) -> str | None:
        mode = self.spec.protocol.aggregation
        if mode is Aggregation.NONE:
            return None
        last: dict[str, str] = {}
        for m in self.trace.messages():
            if m.kind is MessageKind.VOTE:
                last[m.sender] = m.content
        if mode is Aggregation.JUDGE:
            judge = self.spec.protocol.judge_agent or self.spec.topology.hub
            return last.get(judge) if judge else None
        if not last:
            return None
        counts: dict[str, int] = {}
        for v in last.values():
            counts[v] = counts.get(v, 0) + 1
        return min(counts, key=lambda v: (-counts[v], v))

    def _ordering(self, t: int) -> list[str]:
        names = list(self.order)
        how = self.spec.protocol.ordering
        if how is Ordering.ROTATING and names:
            k = t % len(names)
            names = names[k:] + names[:k]
        elif how is Ordering.RANDOM:
            agent_rng(self.seed, "order", t).shuffle(names)
        return names

    def out_neighbours(self, agent: str) -> list[str]:
        return sorted(b for a, b in self.edges if a == agent)

    def _visible(self, agent: str) -> set[str]:
        return {b for a, b in self.edges if a == agent} | {a for a, b in self.edges if b == agent}

    def _view(self, agent: str) -> dict:
        view = self.env.view(self.state, self.decls[agent].view)
        for k in self.inj.withheld.get(agent, ()):
            view.pop(k, None)
        return view

    def observation(self, agent: str, t: int) -> Observation:
        decl = self.decls[agent]
        return Observation(
            step=t,
            agent=agent,
            inbox=tuple(self.inbox[agent]),
            env_view=self._view(agent),
            objective=self.inj.objectives.get(agent, decl.objective),
            peers=tuple(self.out_neighbours(agent)),
            disabled_tools=self.inj.disabled_tools(agent, t),
        )

    def _acquire(self, agent: str, t: int, found: dict[str, tuple[int, str, str]], pending) -> None:
        new = {}
        for label, (depth, via, source) in sorted(found.items()):
            held = self.taint[agent].get(label)
            if held is None:
                self.taint[agent][label] = (t, depth)
                new[label] = {"depth": depth, "via": via, "source": source}
        if new:
            pending.append((_K.AGENT_INTERNAL, {"agent": agent, "what": "taint", "labels": new}))

    def _insert_agent(self, decl, pending) -> list[list[str]]:
        self.decls[decl.name] = decl
        self.order.append(decl.name)
        self.memory[decl.name] = AgentMemory(capacity=decl.memory_capacity)
        self.taint[decl.name] = {}
        self.inbox[decl.name] = []
        added = insert_edges(self.spec.topology.kind, decl.name, self.order, self.spec.topology.hub)
        self.edges |= added
        return [list(e) for e in sorted(added)]

    # -- the step ----------------------------------------------------------

    def _agent_turn(self, name: str, t: int, pending, outgoing: list[Message], actions: list) -> None:
        decl = self.decls[name]
        obs = self.observation(name, t)

        found: dict[str, tuple[int, str, str]] = {}
        for m in obs.inbox:
            for label in m.taint:
                held = self.taint.get(m.sender, {}).get(label)
                depth = (held[1] if held else 0) + 1
                if label not in found or depth < found[label][0]:
                    found[label] = (depth, "message", m.sender)
        for key in sorted(obs.env_view):
            for label in self.key_taint.get(key, ()):
                depth = self.key_depth.get((key, label), 0) + 1
                if label not in found or depth < found[label][0]:
                    found[label] = (depth, "env", key)
        self._acquire(name, t, found, pending)

        memory = self.memory[name]
        if decl.remember_inbox:
            for m in obs.inbox:
                memory = memory.append(t, f"{m.sender}: {m.content}")
        if decl.context_budget is not None:
            memory = truncate_context(memory, decl.context_budget)

        decision = decide(decl.behavior, memory, obs, agent_rng(self.seed, "agent", name, t))

        if decision.seed_taint:
            self._acquire(name, t, {lbl: (0, "seed", name) for lbl in decision.seed_taint}, pending)
        labels = frozenset(self.taint[name])

        if decision.prediction:
            visible = self._visible(name)
            for target in decision.prediction:
                if target not in visible:
                    raise AgentError(f"{name!r} predicts {target!r}, which it cannot see")
            pending.append((_K.AGENT_INTERNAL, {"agent": name, "what": "prediction", "prediction": decision.prediction}))
        if decision.action is not None:
            a = decision.action
            pending.append((_K.ACTION_TAKEN, {"agent": name, "action": a.to_dict(), "taint": sorted(labels)}))
            actions.append((name, a.label, a.args, labels))
        for m in decision.messages:
            outgoing.append(replace(m, step=t, sender=name, taint=m.taint | labels))
        for text in decision.memory_append:
            memory = memory.append(t, text)
        self.memory[name] = memory
        pending.append((_K.AGENT_INTERNAL, {"agent": name, "what": "memory", "memory": memory.to_list()}))

    def _deliver(self, t: int, outgoing: list[Message], corrupted: dict[int, list], pending) -> dict[str, list[Message]]:
        next_inbox: dict[str, list[Message]] = {a: [] for a in self.order}
        comm = self.spec.protocol.comm_model
        for i, m in enumerate(outgoing):
            for firing in corrupted.get(i, []):
                pending.append((_K.INJECTION_FIRED, firing.to_data()))
                if firing.label not in self.taint[m.sender]:
                    # the corrupted output is the sender's error: it is the cascade origin
                    self._acquire(m.sender, t, {firing.label: (0, "injection", firing.label)}, pending)
            allowed = self.out_neighbours(m.sender)
            if comm is CommModel.BROADCAST or BROADCAST in m.to:
                recipients = allowed
            else:
                recipients = sorted(set(m.to))
            groups = [[r] for r in recipients] if comm is CommModel.PAIRWISE else [recipients]
            for group in groups:
                sent, dropped = [], []
                for r in group:
                    if r not in allowed:
                        dropped.append((r, "no-channel", None))
                        continue
                    cut = self.inj.channel_cut(m.sender, r, t)
                    if cut is not None:
                        dropped.append((r, "channel-cut", cut))
                    else:
                        sent.append(r)
                if sent:
                    msg = replace(m, to=tuple(sent))
                    pending.append((_K.MESSAGE_SENT, {"message": msg.to_dict()}))
                    for r in sent:
                        next_inbox[r].append(msg)
                for r, reason, label in dropped:
                    data = {"message": replace(m, to=(r,)).to_dict(), "reason": reason}
                    if label is not None:
                        data["label"] = label
                    pending.append((_K.MESSAGE_DROPPED, data))
        return next_inbox

    def step(self) -> bool:
        """Advance one step; returns False once the run has ended."""
        if self.status is not None:
            return False
        t = self.t
        spec = self.spec
        if t >= self.horizon:
            self._end(t, RunStatus.HORIZON_EXCEEDED, f"horizon {self.horizon} reached")
            return False
        pending: list[tuple[EventKind, dict]] = []

        firings = arm_injections(
            spec.injections, t, self.trace.events, self.inj, lambda lbl: agent_rng(self.seed, "inject", lbl, t)
        )
        for f in firings:
            data = f.to_data()
            if f.action == "InsertAgent":
                decl = next(d for d in self.inj.inserted if d.name == f.details["agent"])
                data["edges"] = self._insert_agent(decl, pending)
            pending.append((_K.INJECTION_FIRED, data))

        outgoing: list[Message] = []
        actions: list = []
        acting = t < spec.protocol.rounds
        if acting:
            for name in self._ordering(t):
                try:
                    self._agent_turn(name, t, pending, outgoing, actions)
                except AgentError as exc:
                    pending.append((_K.AGENT_INTERNAL, {"agent": name, "what": "error", "error": str(exc)}))
                    self._commit(t, pending)
                    self._end(t, RunStatus.FAILURE, f"behaviour error in {name}: {exc}")
                    self.t = t + 1
                    return False

        outgoing, hits = corrupt_pending(self.inj, t, outgoing)
        corrupted: dict[int, list] = {}
        for i, firing in hits:
            corrupted.setdefault(i, []).append(firing)
        self.inbox = self._deliver(t, outgoing, corrupted, pending)

        if acting and spec.protocol.reflection:
            for name in self.order:
                text = f"reflection: step {t}, {len(self.inbox.get(name, []))} messages pending"
                self.memory[name] = self.memory[name].append(t, text)
                pending.append((_K.AGENT_INTERNAL, {"agent": name, "what": "reflection", "text": text}))

        self._step_environment(t, actions, pending)
        newly = self._check_milestones(t, pending)
        self._commit(t, pending)

        failed = [m for m in spec.milestones if m.name in newly and m.fails]
        required = [m for m in spec.milestones if m.required and not m.fails]
        if failed:
            self._end(t, RunStatus.FAILURE, f"failure milestone {failed[0].name!r} reached")
        elif required and all(m.name in self.milestones_hit for m in required):
            self._end(t, RunStatus.SUCCESS, "all required milestones reached")
        elif not required and t + 1 >= spec.protocol.rounds:
            self._end(t, RunStatus.SUCCESS, "protocol completed")
        self.t = t + 1
        return self.status is None

    def _step_environment(self, t: int, actions: list, pending) -> None:
        new, writes = self.env.step(self.state, actions, self.key_taint, agent_rng(self.seed, "env", t), t)
        changes = {k: new[k] for k in sorted(new) if k not in self.state or self.state[k] != new[k]}
        removed = sorted(k for k in self.state if k not in new)
        tainted = {}
        for key, labels in sorted(writes.items()):
            for label in sorted(labels):
                depths = [self.taint[a][label][1] for a, *_ in actions if label in self.taint.get(a, {})]
                if not depths:  # rule-derived: inherit from the keys already carrying the label
                    depths = [d for (_k, lbl), d in self.key_depth.items() if lbl == label]
                depth = min(depths) if depths else 0
                if (key, label) not in self.key_depth or depth < self.key_depth[(key, label)]:
                    self.key_depth[(key, label)] = depth
            self.key_taint[key] = self.key_taint.get(key, frozenset()) | labels
            tainted[key] = sorted(labels)
        self.state = new
        if changes or removed or tainted:
            data: dict[str, Any] = {"changes": changes}
            if removed:
                data["removed"] = removed
            if tainted:
                data["taint"] = tainted
            pending.append((_K.ENV_CHANGED, data))

    def _check_milestones(self, t: int, pending) -> set[str]:
        newly = set()
        for m in self.spec.milestones:
            if m.name not in self.milestones_hit and m.holds(self.state):
                self.milestones_hit[m.name] = t
                newly.add(m.name)
                pending.append((_K.MILESTONE_REACHED, {"name": m.name, "required": m.required, "fails": m.fails}))
        return newly

    def run(self) -> RunResult:
        while self.step():
            pass
        return self.result()

    def result(self) -> RunResult:
        report = {a: {lbl: s for lbl, (s, _d) in sorted(held.items())} for a, held in self.taint.items() if held}
        return RunResult(self.trace, self.status, dict(self.milestones_hit), report, self.reason)


def run_once(spec: ScenarioSpec, seed: int) -> RunResult:
    return Simulation(spec, seed).run()


def probe_agent(spec: ScenarioSpec, seed: int, step: int, agent: str, question: str) -> str:
    """Ask ``agent`` a question at the start of ``step`` on a private re-run.

    The probe runs on its own copy of the simulation, so the main trace for
    ``(spec, seed)`` is unaffected.
    """
    if step < 0:
        raise ProbeError("step must be >= 0")
    sim = Simulation(spec, seed)
    if step > sim.horizon:
        raise ProbeError(f"step {step} is beyond the horizon {sim.horizon}")
    while sim.t < step and sim.step():
        pass
    if sim.t < step:
        raise ProbeError(f"run ended at step {sim.t - 1}; cannot probe step {step}")
    if agent not in sim.decls:
        raise UnknownAgentError(agent)
    obs = sim.observation(agent, step)
    rng = agent_rng(seed, "probe", agent, step)
    return respond(sim.decls[agent].behavior, sim.memory[agent], obs, question, rng)


def replay(trace: Trace, spec: ScenarioSpec) -> RunResult:
    """Re-execute ``trace.seed`` and demand event-for-event equality."""
    if trace.scenario_digest != spec.digest():
        raise DigestMismatch(f"trace was recorded for scenario {trace.scenario_digest[:12]}, not {spec.digest()[:12]}")
    if not trace.ended:
        raise TraceError("cannot replay an unterminated trace")
    fresh = run_once(spec, trace.seed)
    old = [canonical_json(e.to_dict()) for e in trace.events]
    new = [canonical_json(e.to_dict()) for e in fresh.trace.events]
    for i, (a, b) in enumerate(zip(old, new)):
        if a != b:
            raise Divergence(i, json.loads(a), json.loads(b))
    if len(old) != len(new):
        i = min(len(old), len(new))
        raise Divergence(i, json.loads(old[i]) if i < len(old) else None, json.loads(new[i]) if i < len(new) else None)
    return fresh
