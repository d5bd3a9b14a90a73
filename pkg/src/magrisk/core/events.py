"""Messages, events and the append-only run trace."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Iterator

TRACE_SCHEMA = "magrisk-trace/1"
MAX_SEED = 2**64


class TraceError(ValueError):
    pass


class MessageKind(str, Enum):
    STATEMENT = "Statement"
    REQUEST = "Request"
    RESPONSE = "Response"
    VOTE = "Vote"
    PREDICTION = "Prediction"
    REFLECTION = "Reflection"


class EventKind(str, Enum):
    MESSAGE_SENT = "MessageSent"
    MESSAGE_DROPPED = "MessageDropped"
    ACTION_TAKEN = "ActionTaken"
    ENV_CHANGED = "EnvChanged"
    MILESTONE_REACHED = "MilestoneReached"
    INJECTION_FIRED = "InjectionFired"
    AGENT_INTERNAL = "AgentInternal"
    RUN_ENDED = "RunEnded"


def canonical_json(obj: Any) -> str:
    """Deterministic JSON text: sorted keys, no whitespace, no NaN."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def content_hash(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Message:
    step: int
    sender: str
    to: tuple[str, ...]
    content: str
    kind: MessageKind = MessageKind.STATEMENT
    taint: frozenset[str] = frozenset()

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "from": self.sender,
            "to": sorted(self.to),
            "content": self.content,
            "kind": self.kind.value,
            "taint": sorted(self.taint),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Message:
        return cls(
            step=int(d["step"]),
            sender=d["from"],
            to=tuple(d.get("to", ())),
            content=d.get("content", ""),
            kind=MessageKind(d.get("kind", "Statement")),
            taint=frozenset(d.get("taint", ())),
        )


@dataclass(frozen=True)
class Event:
    step: int
    seq: int
    kind: EventKind
    data: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"step": self.step, "seq": self.seq, "kind": self.kind.value, "data": self.data}

    @classmethod
    def from_dict(cls, d: dict) -> Event:
        return cls(int(d["step"]), int(d["seq"]), EventKind(d["kind"]), d.get("data", {}))

    @property
    def message(self) -> Message:
        if self.kind not in (EventKind.MESSAGE_SENT, EventKind.MESSAGE_DROPPED):
            raise TypeError(f"{self.kind.value} event carries no message")
        return Message.from_dict(self.data["message"])


@dataclass
class Trace:
    """Ordered event log of one run plus the header needed to replay it."""

    scenario_digest: str
    seed: int
    events: list[Event] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0 <= int(self.seed) < MAX_SEED:
            raise TraceError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def append(self, event: Event) -> None:
        if self.ended:
            raise TraceError("trace already terminated")
        if self.events:
            last = self.events[-1]
            if (event.step, event.seq) <= (last.step, last.seq):
                raise TraceError(
                    f"event order key {(event.step, event.seq)} not after {(last.step, last.seq)}"
                )
        self.events.append(event)

    @property
    def ended(self) -> bool:
        return bool(self.events) and self.events[-1].kind is EventKind.RUN_ENDED

    @property
    def status(self) -> str | None:
        return self.events[-1].data.get("status") if self.ended else None

    def of_kind(self, *kinds: EventKind) -> Iterator[Event]:
        return (e for e in self.events if e.kind in kinds)

    def messages(self) -> list[Message]:
        return [e.message for e in self.of_kind(EventKind.MESSAGE_SENT)]

    def header(self) -> dict:
        return {
            "schema": TRACE_SCHEMA,
            "scenario_digest": self.scenario_digest,
            "seed": int(self.seed),
            "meta": self.meta,
        }

    def to_lines(self) -> list[str]:
        return [canonical_json(self.header())] + [canonical_json(e.to_dict()) for e in self.events]

    def to_jsonl(self) -> str:
        return "\n".join(self.to_lines()) + "\n"

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> Trace:
        it = (ln for ln in lines if ln.strip())
        try:
            header = json.loads(next(it))
        except StopIteration:
            raise TraceError("empty trace file") from None
        if header.get("schema") != TRACE_SCHEMA:
            raise TraceError(f"unsupported trace schema {header.get('schema')!r}")
        trace = cls(header["scenario_digest"], int(header["seed"]), meta=header.get("meta", {}))
        # Loaded traces are taken verbatim; ordering is checked by the replayer.
        trace.events = [Event.from_dict(json.loads(ln)) for ln in it]
        return trace

    @classmethod
    def from_jsonl(cls, text: str) -> Trace:
        return cls.from_lines(text.splitlines())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def load(cls, path) -> Trace:
        with open(path, encoding="utf-8") as fh:
            return cls.from_lines(fh)


def trace_digest(trace: Trace) -> str:
    """SHA-256 over the canonical serialisation of a terminated trace."""
    if not trace.ended:
        raise TraceError("cannot digest an unterminated trace")
    return hashlib.sha256(trace.to_jsonl().encode("utf-8")).hexdigest()
