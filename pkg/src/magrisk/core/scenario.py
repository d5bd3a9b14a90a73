"""Declarative scenario description and its validator.

Everything here is plain data. Behaviour logic lives in :mod:`magrisk.agents`,
injection logic in :mod:`magrisk.inject`, stepping in :mod:`magrisk.engine`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, ClassVar

from magrisk.core.events import content_hash
from magrisk.core.topology import (
    ProtocolConfig,
    TopologyKind,
    TopologySpec,
    UnknownAgentError,
    topology_violations,
)


class FailureMode(str, Enum):
    CASCADING_RELIABILITY = "cascading-reliability"
    COMMUNICATION = "inter-agent-communication"
    MONOCULTURE = "monoculture-collapse"
    CONFORMITY = "conformity-bias"
    THEORY_OF_MIND = "deficient-theory-of-mind"
    MIXED_MOTIVE = "mixed-motive-dynamics"


HIGH = "high"
EXPOSED = "exposure"

_FM = FailureMode
# Exposure levels per canonical setting; modes absent from a row are not salient.
SETTING_EXPOSURE: dict[TopologyKind, dict[FailureMode, str]] = {
    TopologyKind.SINGLE_AGENT: {_FM.CASCADING_RELIABILITY: HIGH},
    TopologyKind.ORCHESTRATOR: {
        _FM.CASCADING_RELIABILITY: HIGH,
        _FM.COMMUNICATION: HIGH,
        _FM.MONOCULTURE: HIGH,
        _FM.CONFORMITY: EXPOSED,
        _FM.THEORY_OF_MIND: EXPOSED,
        _FM.MIXED_MOTIVE: EXPOSED,
    },
    TopologyKind.SWARM: {
        _FM.CASCADING_RELIABILITY: HIGH,
        _FM.COMMUNICATION: HIGH,
        _FM.MONOCULTURE: HIGH,
        _FM.CONFORMITY: HIGH,
        _FM.THEORY_OF_MIND: HIGH,
        _FM.MIXED_MOTIVE: EXPOSED,
    },
    TopologyKind.TASK_FORCE: {m: HIGH for m in FailureMode},
}


def default_failure_map(kind: TopologyKind) -> tuple[FailureMode, ...]:
    """Salient failure modes for a setting, high-exposure modes first."""
    row = SETTING_EXPOSURE[kind]
    order = list(FailureMode)
    return tuple(sorted(row, key=lambda m: (row[m] != HIGH, order.index(m))))


class BehaviorKind(str, Enum):
    SCRIPTED = "Scripted"
    TABLE_STOCHASTIC = "TableStochastic"
    SYCOPHANT = "Sycophant"
    CONTRARIAN = "Contrarian"
    LLM_ADAPTER = "LLMAdapter"


@dataclass(frozen=True)
class BehaviorSpec:
    kind: BehaviorKind
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "params": self.params}

    @classmethod
    def from_dict(cls, d: dict) -> BehaviorSpec:
        return cls(BehaviorKind(d["kind"]), dict(d.get("params", {})))


def _is_prob(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and 0.0 <= x <= 1.0


def behavior_violations(b: BehaviorSpec, path: str) -> list[Violation]:
    out: list[Violation] = []
    p = b.params
    if b.kind is BehaviorKind.SCRIPTED:
        if not isinstance(p.get("rules", []), list):
            out.append(Violation("bad-parameter", f"{path}.rules", "rules must be a list"))
    elif b.kind is BehaviorKind.TABLE_STOCHASTIC:
        table = p.get("capabilities")
        if not isinstance(table, dict) or not table:
            out.append(Violation("missing-parameter", f"{path}.capabilities", "capability table required"))
        else:
            for tag, prob in table.items():
                if not _is_prob(prob):
                    out.append(Violation("bad-probability", f"{path}.capabilities.{tag}", f"{prob!r} not in [0,1]"))
    elif b.kind is BehaviorKind.SYCOPHANT:
        if "answer" not in p:
            out.append(Violation("missing-parameter", f"{path}.answer", "initial answer required"))
        if not _is_prob(p.get("q", 1.0)):
            out.append(Violation("bad-probability", f"{path}.q", f"{p.get('q')!r} not in [0,1]"))
        mp = p.get("min_pressure", 1)
        if not isinstance(mp, int) or mp < 1:
            out.append(Violation("bad-parameter", f"{path}.min_pressure", "must be an integer >= 1"))
    elif b.kind is BehaviorKind.CONTRARIAN:
        if "answer" not in p:
            out.append(Violation("missing-parameter", f"{path}.answer", "initial answer required"))
    elif b.kind is BehaviorKind.LLM_ADAPTER:
        if "transport" not in p:
            out.append(Violation("missing-parameter", f"{path}.transport", "registered transport name required"))
    return out


@dataclass(frozen=True)
class AgentDecl:
    name: str
    behavior: BehaviorSpec
    objective: str = ""
    view: tuple[str, ...] | None = None  # None grants every environment key
    memory_capacity: int = 256
    context_budget: int | None = None
    remember_inbox: bool = True

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "name": self.name,
            "behavior": self.behavior.to_dict(),
            "objective": self.objective,
            "memory_capacity": self.memory_capacity,
            "remember_inbox": self.remember_inbox,
        }
        if self.view is not None:
            d["view"] = list(self.view)
        if self.context_budget is not None:
            d["context_budget"] = self.context_budget
        return d

    @classmethod
    def from_dict(cls, d: dict) -> AgentDecl:
        view = d.get("view")
        return cls(
            name=d["name"],
            behavior=BehaviorSpec.from_dict(d["behavior"]),
            objective=d.get("objective", ""),
            view=None if view is None else tuple(view),
            memory_capacity=int(d.get("memory_capacity", 256)),
            context_budget=d.get("context_budget"),
            remember_inbox=bool(d.get("remember_inbox", True)),
        )


# -- perturbations ---------------------------------------------------------


@dataclass(frozen=True)
class Trigger:
    """Fires on a step condition and/or a message already in the trace."""

    at_step: int | None = None
    from_step: int | None = None
    message_contains: str | None = None
    message_from: str | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict | None) -> Trigger:
        return cls(**(d or {}))


@dataclass(frozen=True)
class CorruptMessage:
    type: ClassVar[str] = "CorruptMessage"
    find: str
    replace: str
    regex: bool = False
    sender: str | None = None
    recipient: str | None = None


@dataclass(frozen=True)
class DropChannel:
    type: ClassVar[str] = "DropChannel"
    sender: str
    recipient: str
    duration: int = 1


@dataclass(frozen=True)
class InsertAgent:
    type: ClassVar[str] = "InsertAgent"
    agent: AgentDecl


@dataclass(frozen=True)
class ContradictObjective:
    type: ClassVar[str] = "ContradictObjective"
    agent: str
    objective: str


@dataclass(frozen=True)
class WithholdEnvKeys:
    type: ClassVar[str] = "WithholdEnvKeys"
    agent: str
    keys: tuple[str, ...]


@dataclass(frozen=True)
class DisableTool:
    type: ClassVar[str] = "DisableTool"
    agent: str
    task_tag: str
    duration: int = 1


@dataclass(frozen=True)
class DeadlinePressure:
    type: ClassVar[str] = "DeadlinePressure"
    horizon: int


PerturbationAction = (
    CorruptMessage | DropChannel | InsertAgent | ContradictObjective | WithholdEnvKeys | DisableTool | DeadlinePressure
)
ACTION_TYPES: dict[str, type] = {
    cls.type: cls
    for cls in (CorruptMessage, DropChannel, InsertAgent, ContradictObjective, WithholdEnvKeys, DisableTool, DeadlinePressure)
}


def action_to_dict(action) -> dict:
    d: dict[str, Any] = {"type": action.type}
    for k, v in action.__dict__.items():
        if isinstance(v, AgentDecl):
            v = v.to_dict()
        elif isinstance(v, tuple):
            v = list(v)
        if v is not None:
            d[k] = v
    return d


def action_from_dict(d: dict):
    d = dict(d)
    try:
        cls = ACTION_TYPES[d.pop("type")]
    except KeyError as exc:
        raise ValueError(f"unknown perturbation action {exc.args[0]!r}") from None
    if cls is InsertAgent:
        return InsertAgent(AgentDecl.from_dict(d["agent"]))
    if cls is WithholdEnvKeys:
        d["keys"] = tuple(d["keys"])
    return cls(**d)


@dataclass(frozen=True)
class PerturbationSpec:
    label: str
    action: PerturbationAction
    trigger: Trigger = Trigger()
    repeating: bool = False
    probability: float = 1.0

    def to_dict(self) -> dict:
        d = {"label": self.label, "trigger": self.trigger.to_dict(), "action": action_to_dict(self.action)}
        if self.repeating:
            d["repeating"] = True
        if self.probability != 1.0:
            d["probability"] = self.probability
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PerturbationSpec:
        return cls(
            label=d["label"],
            action=action_from_dict(d["action"]),
            trigger=Trigger.from_dict(d.get("trigger")),
            repeating=bool(d.get("repeating", False)),
            probability=float(d.get("probability", 1.0)),
        )


# -- environment & milestones ----------------------------------------------

MILESTONE_OPS = {
    "eq": lambda a, b: a == b,
    "ne": lambda a, b: a != b,
    "gt": lambda a, b: a is not None and a > b,
    "ge": lambda a, b: a is not None and a >= b,
    "lt": lambda a, b: a is not None and a < b,
    "le": lambda a, b: a is not None and a <= b,
    "truthy": lambda a, b: bool(a),
}


@dataclass(frozen=True)
class Milestone:
    """Named predicate over environment state.

    ``required`` milestones must all be hit for Success; reaching a
    ``fails`` milestone ends the run as Failure.
    """

    name: str
    key: str
    op: str = "truthy"
    value: Any = None
    required: bool = True
    fails: bool = False

    def holds(self, state: dict) -> bool:
        return MILESTONE_OPS[self.op](state.get(self.key), self.value)

    def to_dict(self) -> dict:
        d = {"name": self.name, "key": self.key, "op": self.op, "required": self.required, "fails": self.fails}
        if self.value is not None:
            d["value"] = self.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Milestone:
        fails = bool(d.get("fails", False))
        return cls(
            name=d["name"],
            key=d["key"],
            op=d.get("op", "truthy"),
            value=d.get("value"),
            required=bool(d.get("required", not fails)),
            fails=fails,
        )


@dataclass(frozen=True)
class EnvironmentDecl:
    name: str = "ledger"
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "params": self.params}

    @classmethod
    def from_dict(cls, d: dict | None) -> EnvironmentDecl:
        d = d or {}
        return cls(d.get("name", "ledger"), dict(d.get("params", {})))


# -- scenario ----------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    code: str
    path: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.path}: {self.code}" + (f" ({self.detail})" if self.detail else "")


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    topology: TopologySpec
    agents: tuple[AgentDecl, ...]
    protocol: ProtocolConfig = ProtocolConfig()
    environment: EnvironmentDecl = EnvironmentDecl()
    injections: tuple[PerturbationSpec, ...] = ()
    milestones: tuple[Milestone, ...] = ()
    horizon: int = 1
    setting_failure_map: tuple[FailureMode, ...] | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def failure_map(self) -> tuple[FailureMode, ...]:
        if self.setting_failure_map is not None:
            return self.setting_failure_map
        return default_failure_map(self.topology.kind)

    def agent(self, name: str) -> AgentDecl:
        for a in self.agents:
            if a.name == name:
                return a
        raise UnknownAgentError(name)

    def with_injections(self, injections) -> ScenarioSpec:
        return replace(self, injections=tuple(injections))

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "topology": self.topology.to_dict(),
            "agents": [a.to_dict() for a in self.agents],
            "protocol": self.protocol.to_dict(),
            "environment": self.environment.to_dict(),
            "injections": [i.to_dict() for i in self.injections],
            "milestones": [m.to_dict() for m in self.milestones],
            "horizon": self.horizon,
            "metadata": self.metadata,
        }
        if self.setting_failure_map is not None:
            d["setting_failure_map"] = [m.value for m in self.setting_failure_map]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioSpec:
        sfm = d.get("setting_failure_map")
        return cls(
            name=d.get("name", "unnamed"),
            topology=TopologySpec.from_dict(d["topology"]),
            agents=tuple(AgentDecl.from_dict(a) for a in d.get("agents", ())),
            protocol=ProtocolConfig.from_dict(d.get("protocol", {})),
            environment=EnvironmentDecl.from_dict(d.get("environment")),
            injections=tuple(PerturbationSpec.from_dict(i) for i in d.get("injections", ())),
            milestones=tuple(Milestone.from_dict(m) for m in d.get("milestones", ())),
            horizon=int(d.get("horizon", 1)),
            setting_failure_map=None if sfm is None else tuple(FailureMode(m) for m in sfm),
            metadata=dict(d.get("metadata", {})),
        )

    def digest(self) -> str:
        return content_hash(self.to_dict())


def validate(spec: ScenarioSpec) -> list[Violation]:
    """Every violated invariant, each with a path into the scenario."""
    out = [Violation(c, p, d) for c, p, d in topology_violations(spec.topology)]

    names = [a.name for a in spec.agents]
    if len(set(names)) != len(names):
        out.append(Violation("duplicate-agent", "agents", "agent names must be unique"))
    for i, a in enumerate(spec.agents):
        if not a.name:
            out.append(Violation("empty-agent-id", f"agents[{i}].name"))
        out.extend(behavior_violations(a.behavior, f"agents[{i}].behavior.params"))
        if a.memory_capacity < 0:
            out.append(Violation("bad-parameter", f"agents[{i}].memory_capacity", "must be >= 0"))
        if a.context_budget is not None and a.context_budget < 0:
            out.append(Violation("bad-parameter", f"agents[{i}].context_budget", "must be >= 0"))
    if set(names) != set(spec.topology.agents):
        out.append(
            Violation(
                "agent-mismatch",
                "agents",
                f"declared {sorted(names)} but topology names {sorted(spec.topology.agents)}",
            )
        )

    proto = spec.protocol
    if proto.rounds < 1:
        out.append(Violation("bad-rounds", "protocol.rounds", "rounds must be >= 1"))
    if proto.judge_agent is not None and proto.judge_agent not in names:
        out.append(Violation("unknown-agent", "protocol.judge_agent", proto.judge_agent))
    if spec.horizon < 0:
        out.append(Violation("bad-horizon", "horizon", "horizon must be >= 0"))
    elif spec.horizon < proto.rounds:
        out.append(Violation(HORIZON_BELOW_ROUNDS, "horizon", f"horizon {spec.horizon} < rounds {proto.rounds}"))

    seen_ms = set()
    for i, m in enumerate(spec.milestones):
        if m.name in seen_ms:
            out.append(Violation("duplicate-milestone", f"milestones[{i}]", m.name))
        seen_ms.add(m.name)
        if m.op not in MILESTONE_OPS:
            out.append(Violation("bad-operator", f"milestones[{i}].op", m.op))

    out.extend(_injection_violations(spec, set(names)))
    return out


HORIZON_BELOW_ROUNDS = "horizon-below-rounds"


def _injection_violations(spec: ScenarioSpec, known: set[str]) -> list[Violation]:
    out = []
    labels = set()
    known = set(known)
    channels = set(spec.topology.edges)
    for i, inj in enumerate(spec.injections):
        path = f"injections[{i}]"
        if inj.label in labels:
            out.append(Violation("duplicate-label", f"{path}.label", inj.label))
        labels.add(inj.label)
        if not _is_prob(inj.probability):
            out.append(Violation("bad-probability", f"{path}.probability", repr(inj.probability)))
        act = inj.action
        if isinstance(act, InsertAgent):
            if act.agent.name in known:
                out.append(Violation("duplicate-agent", f"{path}.action.agent", act.agent.name))
            known.add(act.agent.name)
            out.extend(behavior_violations(act.agent.behavior, f"{path}.action.agent.behavior.params"))
            continue
        refs = []
        if isinstance(act, (ContradictObjective, WithholdEnvKeys, DisableTool)):
            refs.append(act.agent)
        if isinstance(act, DropChannel):
            refs += [act.sender, act.recipient]
        if isinstance(act, CorruptMessage):
            refs += [r for r in (act.sender, act.recipient) if r is not None]
        for r in refs:
            if r not in known:
                out.append(Violation("unknown-agent", f"{path}.action", r))
        if isinstance(act, DropChannel) and act.sender in known and act.recipient in known:
            if (act.sender, act.recipient) not in channels and act.sender in spec.topology.agents:
                out.append(Violation("unknown-channel", f"{path}.action", f"{act.sender}->{act.recipient}"))
        if isinstance(act, (DropChannel, DisableTool)) and act.duration < 1:
            out.append(Violation("bad-duration", f"{path}.action.duration", "duration must be >= 1"))
        if isinstance(act, DeadlinePressure) and act.horizon < 0:
            out.append(Violation("bad-horizon", f"{path}.action.horizon", "must be >= 0"))
        if inj.trigger.message_from is not None and inj.trigger.message_from not in known:
            out.append(Violation("unknown-agent", f"{path}.trigger.message_from", inj.trigger.message_from))
    return out
