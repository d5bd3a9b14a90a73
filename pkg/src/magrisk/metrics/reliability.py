"""Run-to-run sensitivity, error cascades and the deployment safety factor."""

from __future__ import annotations

import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from magrisk.core.events import EventKind, Trace
from magrisk.core.scenario import ScenarioSpec
from magrisk.engine.environment import parse_quantity
from magrisk.engine.runner import RunResult, RunStatus


class UnknownTaintLabel(KeyError):
    pass


def apply_safety_factor(p: float, n: float) -> float:
    """Scale a simulated failure rate to a deployment estimate, capped at 1."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if n < 1:
        raise ValueError(f"safety factor must be >= 1, got {n}")
    return min(1.0, p * n)


# -- sensitivity -------------------------------------------------------------


def success_score(result: RunResult) -> float:
    return 1.0 if result.status is RunStatus.SUCCESS else 0.0


@dataclass
class SensitivityProfile:
    mean: float
    std: float
    consistency: float
    per_variant: list[float] = field(default_factory=list)
    n_runs: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def sensitivity_profile(
    variants: Sequence[ScenarioSpec],
    n: int,
    score: Callable[[RunResult], float] = success_score,
    seed_base: int = 0,
    jobs: int = 1,
) -> SensitivityProfile:
    """Spread of a run score across equivalent variants of one scenario.

    Every variant runs on the same ``n`` seeds. ``std`` is the population
    standard deviation over all per-run scores and ``consistency`` the
    fraction of runs sharing the modal score.
    """
    from magrisk.engine.ensemble import run_ensemble

    if not variants:
        raise ValueError("need at least one variant")
    if n < 1:
        raise ValueError("n must be >= 1")
    scores: list[float] = []
    per_variant = []
    for spec in variants:
        ens = run_ensemble(spec, n=n, seed_base=seed_base, jobs=jobs)
        vs = [float(score(r)) for r in ens.runs]
        per_variant.append(sum(vs) / len(vs))
        scores.extend(vs)
    modal = Counter(scores).most_common(1)[0][1]
    return SensitivityProfile(
        statistics.fmean(scores), statistics.pstdev(scores), modal / len(scores), per_variant, len(scores)
    )


# -- cascades ----------------------------------------------------------------


@dataclass(frozen=True)
class LinearCost:
    """Cost of an action = ``rate * args[arg]`` for the listed action labels."""

    rates: Mapping[str, tuple[str, float]]

    def __call__(self, label: str, args: Mapping) -> float:
        if label not in self.rates:
            return 0.0
        arg, rate = self.rates[label]
        value = parse_quantity(args.get(arg, 0))
        return float(rate) * float(value)

    @classmethod
    def from_dict(cls, d: Mapping) -> LinearCost:
        return cls({k: (v["arg"], float(v["rate"])) for k, v in d.items()})

    def to_dict(self) -> dict:
        return {k: {"arg": a, "rate": r} for k, (a, r) in self.rates.items()}


@dataclass
class CascadeStats:
    label: str
    agents_reached: int
    max_chain_depth: int
    first_contamination_steps: dict[str, int]
    depths: dict[str, int]
    origins: list[str]
    tainted_cost: float | None = None
    amplification: float | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def cascade_stats(
    trace: Trace,
    label: str,
    cost: Callable[[str, Mapping], float] | None = None,
    baseline_cost: float | None = None,
) -> CascadeStats:
    """How far one taint label spread through the agents of a run.

    ``tainted_cost`` sums ``cost`` over actions carrying the label;
    ``amplification`` divides it by ``baseline_cost`` (the cost the same
    actions would have had without the error).
    """
    first: dict[str, int] = {}
    depth: dict[str, int] = {}
    origins = []
    known = False
    for e in trace.events:
        if e.kind is EventKind.INJECTION_FIRED and e.data.get("label") == label:
            known = True
        if e.kind is EventKind.AGENT_INTERNAL and e.data.get("what") == "taint":
            info = e.data["labels"].get(label)
            if info is None:
                continue
            known = True
            agent = e.data["agent"]
            if agent not in first:
                first[agent] = e.step
                depth[agent] = info["depth"]
                if info["depth"] == 0:
                    origins.append(agent)
    if not known:
        raise UnknownTaintLabel(label)
    total = None
    amp = None
    if cost is not None:
        total = 0.0
        for e in trace.of_kind(EventKind.ACTION_TAKEN):
            if label in e.data.get("taint", ()):
                a = e.data["action"]
                total += cost(a["label"], a.get("args", {}))
        if baseline_cost:
            amp = total / baseline_cost
    return CascadeStats(
        label, len(first), max(depth.values(), default=0), first, depth, origins, total, amp
    )
