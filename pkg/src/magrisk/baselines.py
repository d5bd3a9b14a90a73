"""Baseline comparisons for ensembles and capability task suites.

Every baseline that runs simulations reuses the treatment ensemble's seeds,
so per-seed differences can be paired and identical configurations give a
delta of exactly zero.
"""

from __future__ import annotations

import csv
import math
import statistics
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, Sequence

from magrisk.agents import AgentMemory, Observation, agent_rng, decide
from magrisk.core.scenario import BehaviorKind, BehaviorSpec, ScenarioSpec
from magrisk.engine.ensemble import EnsembleResult, Z95, run_ensemble, wilson_interval
from magrisk.engine.runner import RunResult
from magrisk.metrics.negotiation import OutcomeSpace, pareto_frontier


class BaselineKind(str, Enum):
    SINGLE_AGENT_DECOMPOSED = "SingleAgentDecomposed"
    THEORETICAL_OPTIMUM = "TheoreticalOptimum"
    HISTORICAL = "Historical"
    HUMAN_REFERENCE = "HumanReference"


class BaselineError(ValueError):
    pass


class CoverageWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PairedDelta:
    """Mean of per-seed ``treatment - baseline`` differences with a normal CI."""

    mean: float
    low: float
    high: float
    n: int

    @classmethod
    def of(cls, treatment: Sequence[float], baseline: Sequence[float], z: float = Z95) -> PairedDelta:
        if len(treatment) != len(baseline) or not treatment:
            raise BaselineError("paired samples must be non-empty and of equal length")
        diffs = [a - b for a, b in zip(treatment, baseline)]
        n = len(diffs)
        mean = math.fsum(diffs) / n
        if n < 2 or all(d == diffs[0] for d in diffs):
            return cls(mean, mean, mean, n)
        half = z * statistics.stdev(diffs) / math.sqrt(n)
        return cls(mean, mean - half, mean + half, n)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class BaselineResult:
    kind: BaselineKind
    treatment: EnsembleResult | None
    baseline: EnsembleResult | None = None
    delta: PairedDelta | None = None  # treatment minus baseline success
    optimum: dict | None = None
    reference: dict | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind.value, "notes": self.notes}
        for name in ("treatment", "baseline"):
            ens = getattr(self, name)
            if ens is not None:
                d[name] = {"n": ens.n, "failures": ens.failures, "failure_rate": ens.failure_rate,
                           "interval": list(ens.interval)}
        if self.delta is not None:
            d["delta"] = self.delta.to_dict()
        if self.optimum is not None:
            d["optimum"] = self.optimum
        if self.reference is not None:
            d["reference"] = self.reference
        return d


def _successes(ens: EnsembleResult) -> list[float]:
    return [0.0 if f else 1.0 for f in ens.failed()]


def theoretical_optimum(space: OutcomeSpace) -> dict:
    """Best collective utility; it is always attained on the Pareto frontier."""
    frontier = pareto_frontier(space)
    best = max(frontier, key=lambda lbl: (sum(space.utility(lbl)), lbl))
    return {"label": best, "collective_utility": sum(space.utility(best)), "frontier": sorted(frontier)}


def run_baseline(
    kind: BaselineKind | str,
    spec: ScenarioSpec,
    n: int,
    seed_base: int = 0,
    jobs: int = 1,
    decomposition: ScenarioSpec | Callable[[ScenarioSpec], ScenarioSpec] | None = None,
    outcome_space: OutcomeSpace | None = None,
    outcome_of: Callable[[RunResult], str] | None = None,
    history: EnsembleResult | None = None,
    human_scores: Mapping[str, float] | None = None,
    treatment: EnsembleResult | None = None,
) -> BaselineResult:
    """Compare the multi-agent ensemble for ``spec`` against one baseline.

    ``decomposition`` is the single-agent version of the task (a spec or a
    function deriving one). ``outcome_space`` enumerates outcomes for the
    theoretical optimum; ``outcome_of`` maps a run to its outcome label.
    ``history`` is an earlier ensemble of the same seeds; ``human_scores``
    are externally collected scores in [0, 1], reported side by side only.
    """
    kind = BaselineKind(kind)
    if treatment is None:
        treatment = run_ensemble(spec, n=n, seed_base=seed_base, jobs=jobs)
    seeds = treatment.seeds

    if kind is BaselineKind.SINGLE_AGENT_DECOMPOSED:
        if decomposition is None:
            raise BaselineError("SingleAgentDecomposed needs a decomposition of the task")
        single = decomposition(spec) if callable(decomposition) else decomposition
        base = run_ensemble(single, seeds=seeds, jobs=jobs)
        return BaselineResult(kind, treatment, base, PairedDelta.of(_successes(treatment), _successes(base)),
                              notes=["paired seeds"])

    if kind is BaselineKind.THEORETICAL_OPTIMUM:
        if outcome_space is None:
            # milestone bound: the best possible run reaches every required milestone
            optimum = {"success_rate": 1.0}
            ones = [1.0] * treatment.n
            return BaselineResult(kind, treatment, None, PairedDelta.of(_successes(treatment), ones), optimum,
                                  notes=["bound from required milestones"])
        optimum = theoretical_optimum(outcome_space)
        delta = None
        if outcome_of is not None:
            achieved = [sum(outcome_space.utility(outcome_of(r))) for r in treatment.runs]
            delta = PairedDelta.of(achieved, [optimum["collective_utility"]] * len(achieved))
        return BaselineResult(kind, treatment, None, delta, optimum, notes=["delta is collective-utility gap"])

    if kind is BaselineKind.HISTORICAL:
        if history is None:
            raise BaselineError("Historical baseline needs an earlier ensemble")
        if history.seeds != seeds:
            raise BaselineError("historical ensemble was run on different seeds")
        return BaselineResult(kind, treatment, history, PairedDelta.of(_successes(treatment), _successes(history)),
                              notes=["delta is drift since the historical run"])

    if not human_scores:
        raise BaselineError("HumanReference needs an external scores file")
    scores = list(human_scores.values())
    reference = {"n": len(scores), "mean_score": math.fsum(scores) / len(scores),
                 "treatment_success_rate": treatment.success_rate}
    return BaselineResult(kind, treatment, reference=reference, notes=["unpaired; reported side by side only"])


def load_human_scores(path) -> dict[str, float]:
    """Read ``task_id,score`` rows (scores in [0, 1])."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                score = float(row["score"])
                out[row["task_id"]] = score
            except (KeyError, ValueError) as exc:
                raise BaselineError(f"{path}:{lineno}: bad row: {exc}") from exc
            if not 0.0 <= score <= 1.0:
                raise BaselineError(f"{path}:{lineno}: score {score} outside [0, 1]")
    return out


# -- capability task suites ---------------------------------------------------


class SuiteStage(str, Enum):
    IDENTIFY = "Identify"
    BASELINE = "Baseline"
    ROBUSTNESS = "Robustness"


SOLVED = "solve"


@dataclass(frozen=True)
class TaskCase:
    task_id: str
    capability: str
    input: str = ""
    expected_action: str = SOLVED


@dataclass(frozen=True)
class TaskSuite:
    tasks: tuple[TaskCase, ...]
    stage: SuiteStage = SuiteStage.BASELINE

    @property
    def capabilities(self) -> set[str]:
        return {t.capability for t in self.tasks}

    @classmethod
    def load(cls, path, stage: SuiteStage | str = SuiteStage.BASELINE) -> TaskSuite:
        """Read ``task_id,capability,input,expected_action`` rows."""
        tasks = []
        with open(path, newline="", encoding="utf-8") as fh:
            for lineno, row in enumerate(csv.DictReader(fh), start=2):
                if not row.get("task_id") or not row.get("capability"):
                    raise BaselineError(f"{path}:{lineno}: task_id and capability are required")
                tasks.append(TaskCase(row["task_id"], row["capability"], row.get("input") or "",
                                      row.get("expected_action") or SOLVED))
        return cls(tuple(tasks), SuiteStage(stage))


def scenario_capabilities(spec: ScenarioSpec) -> set[str]:
    """Capability tags the scenario's stochastic agents rely on."""
    tags = set()
    for a in spec.agents:
        if a.behavior.kind is BehaviorKind.TABLE_STOCHASTIC:
            p = a.behavior.params
            tags |= {t for t in p.get("capabilities", {}) if t != "default"}
            tags |= {t["tag"] for t in p.get("tasks", [])}
    return tags


def coverage_gaps(suite: TaskSuite, specs: Iterable[ScenarioSpec]) -> list[str]:
    used = set().union(*(scenario_capabilities(s) for s in specs)) if specs else set()
    return sorted(used - suite.capabilities)


def _task_behavior(behavior: BehaviorSpec, case: TaskCase) -> BehaviorSpec:
    """For table behaviours, attach a task that attempts the case's capability."""
    if behavior.kind is not BehaviorKind.TABLE_STOCHASTIC:
        return behavior
    task = {
        "tag": case.capability,
        "success": {"act": {"label": SOLVED, "task": case.capability}},
        "failure": {"act": {"label": "fail", "task": case.capability}},
    }
    return BehaviorSpec(behavior.kind, {**behavior.params, "tasks": [task]})


@dataclass
class TaskSuiteResult:
    stage: SuiteStage
    rates: dict[str, float]
    counts: dict[str, tuple[int, int]]  # capability -> (successes, attempts)
    intervals: dict[str, tuple[float, float]]
    uncovered: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"stage": self.stage.value, "rates": self.rates, "counts": self.counts,
                "intervals": self.intervals, "uncovered": self.uncovered}


def run_task_suite(
    suite: TaskSuite,
    behavior: BehaviorSpec,
    n: int,
    seed_base: int = 0,
    scenarios: Sequence[ScenarioSpec] = (),
) -> TaskSuiteResult:
    """Per-capability success rates of ``behavior`` over ``n`` attempts per task.

    A task succeeds when the behaviour's action label equals the case's
    ``expected_action``. Capability tags used by ``scenarios`` but absent
    from the suite are returned in ``uncovered`` and raised as a warning.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not suite.tasks:
        raise BaselineError("task suite is empty")
    tally: dict[str, list[int]] = {}
    for case in suite.tasks:
        b = _task_behavior(behavior, case)
        obs = Observation(0, "candidate", env_view={"task": case.task_id, "input": case.input},
                          objective=f"Complete task {case.task_id}.")
        hits = 0
        for seed in range(seed_base, seed_base + n):
            decision = decide(b, AgentMemory(), obs, agent_rng(seed, "task", case.task_id))
            hits += decision.action is not None and decision.action.label == case.expected_action
        t = tally.setdefault(case.capability, [0, 0])
        t[0] += hits
        t[1] += n
    rates = {c: s / a for c, (s, a) in sorted(tally.items())}
    counts = {c: (s, a) for c, (s, a) in sorted(tally.items())}
    intervals = {c: wilson_interval(s, a) for c, (s, a) in sorted(tally.items())}
    uncovered = coverage_gaps(suite, scenarios)
    if uncovered:
        warnings.warn(f"task suite does not cover capabilities: {', '.join(uncovered)}", CoverageWarning,
                      stacklevel=2)
    return TaskSuiteResult(suite.stage, rates, counts, intervals, uncovered)

