"""Shared domain types: topology, protocol, messages, events, traces, scenarios."""

from magrisk.core.events import (
    TRACE_SCHEMA,
    Event,
    EventKind,
    Message,
    MessageKind,
    Trace,
    TraceError,
    canonical_json,
    content_hash,
    trace_digest,
)
from magrisk.core.scenario import (
    SETTING_EXPOSURE,
    AgentDecl,
    BehaviorKind,
    BehaviorSpec,
    ContradictObjective,
    CorruptMessage,
    DeadlinePressure,
    DisableTool,
    DropChannel,
    EnvironmentDecl,
    FailureMode,
    InsertAgent,
    Milestone,
    PerturbationSpec,
    ScenarioSpec,
    Trigger,
    Violation,
    WithholdEnvKeys,
    default_failure_map,
    validate,
)
from magrisk.core.topology import (
    Aggregation,
    CommModel,
    Ordering,
    ProtocolConfig,
    TopologyKind,
    TopologySpec,
    UnknownAgentError,
    allowed_recipients,
)
