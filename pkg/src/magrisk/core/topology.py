"""Communication topologies and interaction protocols."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable


class TopologyKind(str, Enum):
    SINGLE_AGENT = "SingleAgent"
    ORCHESTRATOR = "Orchestrator"
    SWARM = "Swarm"
    TASK_FORCE = "TaskForce"


class Ordering(str, Enum):
    FIXED = "Fixed"
    ROTATING = "Rotating"
    RANDOM = "Random"


class CommModel(str, Enum):
    PAIRWISE = "Pairwise"
    BROADCAST = "Broadcast"
    MULTICAST = "Multicast"


class Aggregation(str, Enum):
    NONE = "None"
    MAJORITY_VOTE = "MajorityVote"
    JUDGE = "Judge"


class UnknownAgentError(KeyError):
    """Raised when an operation names an agent the scenario does not declare."""

    def __str__(self) -> str:
        return f"unknown agent: {self.args[0]!r}"


@dataclass(frozen=True)
class TopologySpec:
    """Who may send to whom.

    ``edges`` holds ordered ``(sender, receiver)`` pairs. ``agents`` lists the
    declared agents so that isolated agents (no edges) are still known.
    """

    kind: TopologyKind
    agents: tuple[str, ...]
    edges: frozenset[tuple[str, str]] = field(default_factory=frozenset)
    hub: str | None = None

    @classmethod
    def single(cls, agent: str) -> TopologySpec:
        return cls(TopologyKind.SINGLE_AGENT, (agent,))

    @classmethod
    def star(cls, hub: str, spokes: Iterable[str]) -> TopologySpec:
        spokes = tuple(spokes)
        edges = {(hub, s) for s in spokes} | {(s, hub) for s in spokes}
        return cls(TopologyKind.ORCHESTRATOR, (hub, *spokes), frozenset(edges), hub)

    @classmethod
    def swarm(cls, agents: Iterable[str]) -> TopologySpec:
        agents = tuple(agents)
        edges = {(a, b) for a in agents for b in agents if a != b}
        return cls(TopologyKind.SWARM, agents, frozenset(edges))

    @classmethod
    def task_force(
        cls, agents: Iterable[str], edges: Iterable[tuple[str, str]] | None = None
    ) -> TopologySpec:
        agents = tuple(agents)
        if edges is None:
            edges = {(a, b) for a in agents for b in agents if a != b}
        return cls(TopologyKind.TASK_FORCE, agents, frozenset(tuple(e) for e in edges))

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind.value,
            "agents": list(self.agents),
            "edges": [list(e) for e in sorted(self.edges)],
        }
        if self.hub is not None:
            d["hub"] = self.hub
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TopologySpec:
        kind = TopologyKind(d["kind"])
        agents = tuple(d.get("agents", ()))
        hub = d.get("hub")
        edges = d.get("edges")
        if edges is None:
            # Shorthand: derive the default edge pattern for the kind.
            if kind is TopologyKind.ORCHESTRATOR and hub is not None:
                return cls.star(hub, [a for a in agents if a != hub])
            if kind is TopologyKind.SWARM:
                return cls.swarm(agents)
            if kind is TopologyKind.TASK_FORCE:
                return cls.task_force(agents)
            edges = []
        return cls(kind, agents, frozenset(tuple(e) for e in edges), hub)


def allowed_recipients(topology: TopologySpec, sender: str) -> frozenset[str]:
    """Exact out-neighbour set of ``sender``."""
    if sender not in topology.agents:
        raise UnknownAgentError(sender)
    return frozenset(b for a, b in topology.edges if a == sender)


def topology_violations(topology: TopologySpec, path: str = "topology") -> list[tuple[str, str, str]]:
    """Structural checks; returns ``(code, path, detail)`` triples."""
    out = []
    agents = topology.agents
    if len(set(agents)) != len(agents):
        out.append(("duplicate-agent", f"{path}.agents", "agent names must be unique"))
    for i, a in enumerate(agents):
        if not isinstance(a, str) or not a:
            out.append(("empty-agent-id", f"{path}.agents[{i}]", "agent ids must be non-empty strings"))
    declared = set(agents)
    for a, b in sorted(topology.edges):
        if a not in declared or b not in declared:
            out.append(("unknown-edge-endpoint", f"{path}.edges", f"{a}->{b} names an undeclared agent"))
        if a == b:
            out.append(("self-loop", f"{path}.edges", f"{a}->{b}"))

    kind = topology.kind
    if kind is TopologyKind.SINGLE_AGENT:
        if len(agents) != 1:
            out.append(("agent-count", f"{path}.agents", f"SingleAgent needs exactly 1 agent, got {len(agents)}"))
        if topology.edges:
            out.append(("unexpected-edges", f"{path}.edges", "SingleAgent has no channels"))
    if kind is TopologyKind.ORCHESTRATOR:
        hub = topology.hub
        if hub is None:
            out.append(("missing-hub", f"{path}.hub", "Orchestrator topology requires a hub"))
        elif hub not in declared:
            out.append(("unknown-hub", f"{path}.hub", f"hub {hub!r} is not a declared agent"))
        else:
            for a, b in sorted(topology.edges):
                if hub not in (a, b):
                    out.append(("non-star-edge", f"{path}.edges", f"{a}->{b} bypasses hub {hub!r}"))
    elif topology.hub is not None:
        out.append(("unexpected-hub", f"{path}.hub", "only Orchestrator topologies have a hub"))
    if kind is TopologyKind.SWARM:
        for a, b in sorted(topology.edges):
            if (b, a) not in topology.edges:
                out.append(("asymmetric-edge", f"{path}.edges", f"{a}->{b} has no reverse channel"))
    return out


@dataclass(frozen=True)
class ProtocolConfig:
    rounds: int = 1
    ordering: Ordering = Ordering.FIXED
    comm_model: CommModel = CommModel.MULTICAST
    reflection: bool = False
    aggregation: Aggregation = Aggregation.NONE
    judge_agent: str | None = None

    def to_dict(self) -> dict:
        d = {
            "rounds": self.rounds,
            "ordering": self.ordering.value,
            "comm_model": self.comm_model.value,
            "reflection": self.reflection,
            "aggregation": self.aggregation.value,
        }
        if self.judge_agent is not None:
            d["judge_agent"] = self.judge_agent
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ProtocolConfig:
        return cls(
            rounds=int(d.get("rounds", 1)),
            ordering=Ordering(d.get("ordering", "Fixed")),
            comm_model=CommModel(d.get("comm_model", "Multicast")),
            reflection=bool(d.get("reflection", False)),
            aggregation=Aggregation(d.get("aggregation", "None")),
            judge_agent=d.get("judge_agent"),
        )
