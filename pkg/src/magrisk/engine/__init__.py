"""Deterministic simulation engine: single runs, ensembles, replay and probes."""

from magrisk.engine.ensemble import EnsembleResult, run_ensemble, wilson_interval
from magrisk.engine.environment import (
    Environment,
    LedgerEnvironment,
    make_environment,
    parse_quantity,
    register_environment,
)
from magrisk.engine.runner import (
    DigestMismatch,
    Divergence,
    ProbeError,
    ReplayError,
    RunResult,
    RunStatus,
    ScenarioInvalid,
    Simulation,
    probe_agent,
    replay,
    run_once,
)
