"""Mixed-motive outcome analysis: Pareto efficiency, cooperation, value orientation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence


@dataclass(frozen=True)
class OutcomeSpace:
    outcomes: tuple[tuple[str, tuple[float, ...]], ...]

    def __post_init__(self) -> None:
        if not self.outcomes:
            raise ValueError("outcome space is empty")
        labels = [lbl for lbl, _ in self.outcomes]
        if len(set(labels)) != len(labels):
            raise ValueError("outcome labels must be unique")
        widths = {len(u) for _, u in self.outcomes}
        if len(widths) != 1:
            raise ValueError("every outcome needs one utility per agent")
        for lbl, u in self.outcomes:
            if any(not math.isfinite(x) for x in u):
                raise ValueError(f"outcome {lbl!r} has a non-finite utility")

    @classmethod
    def of(cls, outcomes: Mapping[str, Sequence[float]] | Iterable[tuple[str, Sequence[float]]]) -> OutcomeSpace:
        items = outcomes.items() if isinstance(outcomes, Mapping) else outcomes
        return cls(tuple((str(k), tuple(float(x) for x in v)) for k, v in items))

    def utility(self, label: str) -> tuple[float, ...]:
        for lbl, u in self.outcomes:
            if lbl == label:
                return u
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {lbl: list(u) for lbl, u in self.outcomes}


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    return all(x >= y for x, y in zip(a, b)) and any(x > y for x, y in zip(a, b))


def pareto_frontier(space: OutcomeSpace) -> set[str]:
    """Labels of the non-dominated outcomes.

    Outcomes are visited in decreasing order of total utility (ties broken
    lexicographically), so any dominator is visited before what it
    dominates and only frontier members need checking.
    """
    order = sorted(space.outcomes, key=lambda o: (sum(o[1]), o[1]), reverse=True)
    frontier: list[tuple[str, tuple[float, ...]]] = []
    for lbl, u in order:
        if not any(dominates(f, u) for _, f in frontier):
            frontier.append((lbl, u))
    return {lbl for lbl, _ in frontier}


def is_pareto_optimal(space: OutcomeSpace, label: str) -> bool:
    u = space.utility(label)
    return not any(dominates(v, u) for _, v in space.outcomes)


def cooperation_index(achieved: Sequence[float], space: OutcomeSpace) -> float:
    """Collective utility of ``achieved`` rescaled to [0, 1] over the space."""
    totals = [sum(u) for _, u in space.outcomes]
    lo, hi = min(totals), max(totals)
    if hi <= lo:
        raise ValueError("collective utility is constant over the outcome space")
    return (sum(achieved) - lo) / (hi - lo)


class SVOCategory(str, Enum):
    COMPETITIVE = "Competitive"
    INDIVIDUALISTIC = "Individualistic"
    PROSOCIAL = "Prosocial"


# lower edges in degrees; angles beyond the prosocial band still map to Prosocial
SVO_BOUNDARIES = {"individualistic": -12.5, "prosocial": 22.5, "prosocial_upper": 57.5}


@dataclass(frozen=True)
class SVOChoice:
    options: tuple[tuple[float, float], ...]  # (self payoff, other payoff)
    chosen: int

    def __post_init__(self) -> None:
        if not 0 <= self.chosen < len(self.options):
            raise ValueError(f"chosen index {self.chosen} out of range")


@dataclass(frozen=True)
class SVOResult:
    category: SVOCategory
    angle: float
    beyond_prosocial: bool = False


def svo_classify(choices: Sequence[SVOChoice], boundaries: Mapping[str, float] | None = None) -> SVOResult:
    if not choices:
        raise ValueError("need at least one choice")
    b = {**SVO_BOUNDARIES, **(boundaries or {})}
    mean_self = sum(c.options[c.chosen][0] for c in choices) / len(choices)
    mean_other = sum(c.options[c.chosen][1] for c in choices) / len(choices)
    angle = math.degrees(math.atan2(mean_other, mean_self))
    if angle < b["individualistic"]:
        cat = SVOCategory.COMPETITIVE
    elif angle < b["prosocial"]:
        cat = SVOCategory.INDIVIDUALISTIC
    else:
        cat = SVOCategory.PROSOCIAL
    return SVOResult(cat, angle, angle >= b["prosocial_upper"])
