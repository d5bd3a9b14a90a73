"""Abandonment of correct answers under peer pressure."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable


@dataclass(frozen=True)
class Trial:
    initial: str
    correct: bool  # was the initial answer correct
    pressure: int  # number of peers pushing a different answer
    final: str

    @property
    def abandoned(self) -> bool:
        return self.final != self.initial


@dataclass
class AbandonmentResult:
    rate: float | None
    curve: dict[int, float] = field(default_factory=dict)
    counts: dict[int, int] = field(default_factory=dict)
    threshold: int | None = None
    n: int = 0

    def to_dict(self) -> dict:
        return {
            "rate": self.rate,
            "curve": {str(k): v for k, v in self.curve.items()},
            "counts": {str(k): v for k, v in self.counts.items()},
            "threshold": self.threshold,
            "n": self.n,
        }


def abandonment_rate(trials: Iterable[Trial], threshold_rate: float = 0.5) -> AbandonmentResult:
    """Switch rate among initially-correct trials, overall and per pressure size.

    ``threshold`` is the smallest pressure size whose rate reaches
    ``threshold_rate``.
    """
    eligible = [t for t in trials if t.correct]
    if not eligible:
        return AbandonmentResult(None)
    by_size: dict[int, list[bool]] = {}
    for t in eligible:
        by_size.setdefault(t.pressure, []).append(t.abandoned)
    curve = {k: sum(v) / len(v) for k, v in sorted(by_size.items())}
    counts = {k: len(v) for k, v in sorted(by_size.items())}
    threshold = next((k for k, r in curve.items() if k > 0 and r >= threshold_rate), None)
    rate = sum(t.abandoned for t in eligible) / len(eligible)
    return AbandonmentResult(rate, curve, counts, threshold, len(eligible))
