"""Monte-Carlo repetition of a scenario over seeds."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from magrisk.core.events import Event, EventKind, Trace
from magrisk.core.scenario import ScenarioSpec
from magrisk.engine.runner import RunResult, RunStatus, Simulation

log = logging.getLogger(__name__)

Z95 = 1.959963984540054


def wilson_interval(failures: int, n: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= failures <= n:
        raise ValueError("failures must lie in [0, n]")
    p = failures / n
    z2 = z * z
    denom = 1.0 + z2 / n
    centre = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    lo, hi = max(0.0, centre - half), min(1.0, centre + half)
    # guard the closed-form against rounding at the boundaries
    return min(lo, p), max(hi, p)


@dataclass
class EnsembleResult:
    runs: list[RunResult]
    seeds: list[int]
    failures: int
    interval: tuple[float, float]
    keep_traces: bool = True
    statuses: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.seeds)

    @property
    def failure_fraction(self) -> Fraction:
        return Fraction(self.failures, self.n)

    @property
    def failure_rate(self) -> float:
        return self.failures / self.n

    @property
    def success_rate(self) -> float:
        return 1.0 - self.failure_rate

    def failed(self) -> list[bool]:
        """Per-seed failure indicators, in seed order."""
        return [s != RunStatus.SUCCESS.value for s in self.statuses]


def _crashed(spec: ScenarioSpec, seed: int, exc: Exception) -> RunResult:
    trace = Trace(spec.digest(), seed, meta={"scenario": spec.name})
    reason = f"run aborted: {type(exc).__name__}: {exc}"
    trace.append(Event(0, 0, EventKind.RUN_ENDED, {"status": RunStatus.FAILURE.value, "reason": reason, "milestones": {}}))
    return RunResult(trace, RunStatus.FAILURE, reason=reason)


def _safe_run(args: tuple[ScenarioSpec, int]) -> RunResult:
    spec, seed = args
    try:
        return Simulation(spec, seed).run()
    except Exception as exc:  # a crashed run is a failed run, never a crashed ensemble
        log.warning("seed %d crashed: %s", seed, exc)
        return _crashed(spec, seed, exc)


def run_ensemble(
    spec: ScenarioSpec,
    seeds: Iterable[int] | None = None,
    n: int | None = None,
    seed_base: int = 0,
    jobs: int = 1,
    keep_traces: bool = True,
) -> EnsembleResult:
    """Run ``spec`` once per seed; seeds default to ``seed_base .. seed_base+n-1``.

    Results are ordered by seed list position regardless of ``jobs``.
    """
    if seeds is None:
        if n is None or n < 1:
            raise ValueError("need a seed list or n >= 1")
        seeds = range(seed_base, seed_base + n)
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("need at least one seed")
    work = [(spec, s) for s in seeds]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_safe_run, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        runs = [_safe_run(w) for w in work]
    statuses = [r.status.value for r in runs]
    failures = sum(1 for r in runs if r.status is not RunStatus.SUCCESS)
    if not keep_traces:
        runs = []
    return EnsembleResult(runs, seeds, failures, wilson_interval(failures, len(seeds)), keep_traces, statuses)


def paired_indicators(a: EnsembleResult, b: EnsembleResult) -> list[tuple[bool, bool]]:
    if a.seeds != b.seeds:
        raise ValueError("ensembles were not run on the same seeds")
    return list(zip(a.failed(), b.failed()))


def seeds_of(results: Sequence[RunResult]) -> list[int]:
    return [r.seed for r in results]
