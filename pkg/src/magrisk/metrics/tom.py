"""Scoring agents' predictions about their peers' next actions."""

from __future__ import annotations

from dataclasses import dataclass, field

from magrisk.core.events import EventKind, Trace


@dataclass
class AgentToM:
    predictions: int
    resolved: int
    accuracy: float | None
    brier: float | None  # only over predictions given as distributions
    brier_n: int = 0


@dataclass
class ToMScore:
    agents: dict[str, AgentToM] = field(default_factory=dict)
    no_data: bool = False

    def to_dict(self) -> dict:
        if self.no_data:
            return {"no_data": True}
        return {"no_data": False, "agents": {a: s.__dict__ for a, s in self.agents.items()}}


def _point(pred) -> str:
    if isinstance(pred, dict):
        # most probable label, ties broken by label order
        return min(pred, key=lambda k: (-float(pred[k]), k))
    return str(pred)


def brier(dist: dict, actual: str) -> float:
    labels = set(dist) | {actual}
    return sum((float(dist.get(k, 0.0)) - (1.0 if k == actual else 0.0)) ** 2 for k in labels)


def tom_score(trace: Trace) -> ToMScore:
    """Accuracy and Brier score of every agent's recorded predictions.

    A prediction made at step ``t`` about agent ``B`` resolves against
    ``B``'s first action with step greater than ``t``; predictions that never
    resolve count towards ``predictions`` but not ``resolved``.
    """
    actions: dict[str, list[tuple[int, str]]] = {}
    predictions: list[tuple[int, str, str, object]] = []
    for e in trace.events:
        if e.kind is EventKind.ACTION_TAKEN:
            actions.setdefault(e.data["agent"], []).append((e.step, e.data["action"]["label"]))
        elif e.kind is EventKind.AGENT_INTERNAL and e.data.get("what") == "prediction":
            for target, pred in sorted(e.data["prediction"].items()):
                predictions.append((e.step, e.data["agent"], target, pred))
    if not predictions:
        return ToMScore(no_data=True)

    tallies: dict[str, dict] = {}
    for step, who, target, pred in predictions:
        tl = tallies.setdefault(who, {"n": 0, "resolved": 0, "hits": 0, "brier": 0.0, "brier_n": 0})
        tl["n"] += 1
        actual = next((lbl for s, lbl in actions.get(target, ()) if s > step), None)
        if actual is None:
            continue
        tl["resolved"] += 1
        tl["hits"] += _point(pred) == actual
        if isinstance(pred, dict):
            tl["brier"] += brier(pred, actual)
            tl["brier_n"] += 1
    out = {}
    for who, tl in sorted(tallies.items()):
        acc = tl["hits"] / tl["resolved"] if tl["resolved"] else None
        b = tl["brier"] / tl["brier_n"] if tl["brier_n"] else None
        out[who] = AgentToM(tl["n"], tl["resolved"], acc, b, tl["brier_n"])
    return ToMScore(out)
