"""Agent behaviours.

A behaviour is a pure function ``decide(behavior, memory, obs, rng)``. All
randomness comes from the ``rng`` handed in by the engine; behaviours never
touch a clock or OS entropy, which keeps every run replayable.

Built-in kinds:

* ``Scripted`` -- ordered ``when``/``then`` rules, first match wins.
* ``TableStochastic`` -- scripted rules plus per-task Bernoulli capability
  draws and random choices (``{"choice": [...]}``).
* ``Sycophant`` -- holds an answer and adopts the peer-majority vote with
  probability ``q`` once at least ``min_pressure`` peers back it.
* ``Contrarian`` -- votes against the peer majority.
* ``LLMAdapter`` -- request/response contract over a registered transport.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Sequence

from magrisk.core.events import Message, MessageKind, canonical_json
from magrisk.core.scenario import BehaviorKind, BehaviorSpec, behavior_violations

BROADCAST = "*"


class AgentError(RuntimeError):
    """A behaviour could not produce a decision (bad parameters, adapter failure)."""


class MissingCapabilityError(AgentError, KeyError):
    pass


def agent_rng(seed: int, *path: Any) -> random.Random:
    """Independent stream for ``(seed, *path)``.

    Streams are keyed by name rather than drawn sequentially from a parent,
    so adding an agent never shifts another agent's draws.
    """
    key = canonical_json([int(seed), *path]).encode("utf-8")
    return random.Random(int.from_bytes(hashlib.sha256(key).digest()[:8], "big"))


@dataclass(frozen=True)
class Observation:
    step: int
    agent: str
    inbox: tuple[Message, ...] = ()
    env_view: Mapping[str, Any] = field(default_factory=dict)
    objective: str = ""
    peers: tuple[str, ...] = ()
    disabled_tools: frozenset[str] = frozenset()


@dataclass(frozen=True)
class AgentMemory:
    entries: tuple[tuple[int, str], ...] = ()
    capacity: int = 256

    def append(self, step: int, text: str) -> AgentMemory:
        entries = self.entries + ((step, text),)
        if len(entries) > self.capacity:
            entries = entries[len(entries) - self.capacity :]
        return replace(self, entries=entries)

    def recall(self) -> dict[str, str]:
        """Latest value for every ``prefix: value`` entry."""
        out = {}
        for _, text in self.entries:
            head, sep, tail = text.partition(":")
            if sep:
                out[head.strip()] = tail.strip()
        return out

    def digest(self) -> str:
        if not self.entries:
            return "(empty)"
        return "\n".join(f"[{s}] {t}" for s, t in self.entries)

    def to_list(self) -> list[list]:
        return [[s, t] for s, t in self.entries]


def truncate_context(memory: AgentMemory, budget: int) -> AgentMemory:
    """Keep the most recent ``budget`` entries, oldest dropped first."""
    if budget < 0:
        raise ValueError("budget must be >= 0")
    if len(memory.entries) <= budget:
        return memory
    return replace(memory, entries=memory.entries[len(memory.entries) - budget :] if budget else ())


@dataclass(frozen=True)
class Action:
    label: str
    args: dict = field(default_factory=dict)
    task_tag: str | None = None

    def to_dict(self) -> dict:
        d = {"label": self.label, "args": self.args}
        if self.task_tag is not None:
            d["task"] = self.task_tag
        return d


@dataclass(frozen=True)
class AgentDecision:
    messages: tuple[Message, ...] = ()
    action: Action | None = None
    # target agent -> label, or target -> {label: probability}
    prediction: dict | None = None
    memory_append: tuple[str, ...] = ()
    seed_taint: frozenset[str] = frozenset()


def capability_lookup(
    table: Mapping[str, float], task_tag: str, rng: random.Random, disabled: frozenset[str] = frozenset()
) -> bool:
    """Bernoulli draw from the tag's success probability.

    One uniform is always consumed, so disabling a tool does not shift the
    rest of the stream.
    """
    if task_tag in table:
        p = table[task_tag]
    elif "default" in table:
        p = table["default"]
    else:
        raise MissingCapabilityError(f"no capability entry for {task_tag!r} and no default")
    u = rng.random()
    return task_tag not in disabled and u < p


# -- rule interpreter --------------------------------------------------------


class _Fill(dict):
    def __missing__(self, key):
        return "{" + key + "}"


def _render(template: Any, ctx: Mapping[str, Any]) -> Any:
    if isinstance(template, str):
        try:
            return template.format_map(_Fill(ctx))
        except (IndexError, ValueError, AttributeError, KeyError):
            return template
    if isinstance(template, list):
        return [_render(t, ctx) for t in template]
    if isinstance(template, dict):
        return {k: _render(v, ctx) for k, v in template.items()}
    return template


_MESSAGE_CONDS = ("any_message", "contains", "regex", "from", "kind")


def _message_bindings(when: Mapping, inbox: Sequence[Message]) -> list[dict]:
    out = []
    for m in inbox:
        b = {"content": m.content, "sender": m.sender, "kind": m.kind.value}
        if "from" in when and m.sender != when["from"]:
            continue
        if "kind" in when and m.kind.value != when["kind"]:
            continue
        if "contains" in when and when["contains"].lower() not in m.content.lower():
            continue
        if "regex" in when:
            hit = re.search(when["regex"], m.content)
            if not hit:
                continue
            b.update({k: v for k, v in hit.groupdict().items() if v is not None})
        out.append(b)
    return out


def _rule_bindings(when: Mapping, obs: Observation, memory: AgentMemory) -> list[dict]:
    step = obs.step
    if "step" in when:
        steps = when["step"] if isinstance(when["step"], list) else [when["step"]]
        if step not in steps:
            return []
    if "from_step" in when and step < when["from_step"]:
        return []
    if "until_step" in when and step > when["until_step"]:
        return []
    if "objective_contains" in when and when["objective_contains"].lower() not in obs.objective.lower():
        return []
    if "memory_contains" in when:
        needle = when["memory_contains"].lower()
        if not any(needle in t.lower() for _, t in memory.entries):
            return []
    for k, v in when.get("env", {}).items():
        if obs.env_view.get(k) != v:
            return []
    if any(c in when for c in _MESSAGE_CONDS):
        return _message_bindings(when, obs.inbox)
    return [{}]


class _Builder:
    def __init__(self, obs: Observation, rng: random.Random, stochastic: bool):
        self.obs = obs
        self.rng = rng
        self.stochastic = stochastic
        self.messages: list[Message] = []
        self.action: Action | None = None
        self.prediction: dict = {}
        self.memory: list[str] = []
        self.taint: set[str] = set()

    def _choose(self, value: Any) -> Any:
        if isinstance(value, dict) and set(value) == {"choice"}:
            if not self.stochastic:
                raise AgentError("random choice requires a TableStochastic behaviour")
            options = list(value["choice"])
            if not options:
                raise AgentError("empty choice list")
            return options[self.rng.randrange(len(options))]
        return value

    def apply(self, then: Mapping, ctx: Mapping[str, Any]) -> None:
        obs = self.obs
        for say in then.get("say", []):
            to = say.get("to", BROADCAST)
            if to == "sender":
                to = [ctx.get("sender")] if ctx.get("sender") else []
            elif isinstance(to, str):
                to = [to]
            kind = MessageKind(say.get("kind", "Statement"))
            content = str(_render(self._choose(say.get("content", "")), ctx))
            self.messages.append(Message(obs.step, obs.agent, tuple(to), content, kind))
        if "act" in then:
            if self.action is not None:
                raise AgentError(f"agent {obs.agent!r} produced two actions at step {obs.step}")
            act = then["act"]
            label = self._choose(act["label"])
            args = _render({k: self._choose(v) for k, v in act.get("args", {}).items()}, ctx)
            self.action = Action(str(_render(label, ctx)), args, act.get("task"))
        for target, pred in then.get("predict", {}).items():
            pred = self._choose(pred)
            self.prediction[target] = pred if isinstance(pred, dict) else str(_render(pred, ctx))
        if "remember" in then:
            self.memory.append(str(_render(then["remember"], ctx)))
        if "seed_taint" in then:
            self.taint.add(then["seed_taint"])

    def build(self) -> AgentDecision:
        return AgentDecision(
            tuple(self.messages),
            self.action,
            self.prediction or None,
            tuple(self.memory),
            frozenset(self.taint),
        )


def _context(obs: Observation, memory: AgentMemory) -> dict:
    return {
        "agent": obs.agent,
        "step": obs.step,
        "objective": obs.objective,
        "memory": memory.digest(),
        "recall": memory.recall(),
        **{f"env_{k}": v for k, v in obs.env_view.items()},
    }


def _run_rules(p: Mapping, obs: Observation, memory: AgentMemory, b: _Builder) -> None:
    for rule in p.get("rules", []):
        bindings = _rule_bindings(rule.get("when", {}), obs, memory)
        if not bindings:
            continue
        base = _context(obs, memory)
        for bind in bindings if rule.get("each") else bindings[:1]:
            b.apply(rule.get("then", {}), {**base, **bind})
        if not rule.get("fallthrough"):
            break


def _decide_scripted(p: Mapping, memory: AgentMemory, obs: Observation, rng: random.Random) -> AgentDecision:
    b = _Builder(obs, rng, stochastic=False)
    _run_rules(p, obs, memory, b)
    return b.build()


def _decide_table(p: Mapping, memory: AgentMemory, obs: Observation, rng: random.Random) -> AgentDecision:
    b = _Builder(obs, rng, stochastic=True)
    table = p["capabilities"]
    for task in p.get("tasks", []):
        steps = task.get("step")
        steps = steps if isinstance(steps, list) or steps is None else [steps]
        if steps is not None and obs.step not in steps:
            continue
        ok = capability_lookup(table, task["tag"], rng, obs.disabled_tools)
        ctx = {**_context(obs, memory), "task": task["tag"], "success": ok}
        b.apply(task.get("success" if ok else "failure", {}), ctx)
    _run_rules(p, obs, memory, b)
    return b.build()


def _peer_votes(obs: Observation) -> list[tuple[str, str]]:
    """Latest vote per peer, in first-seen order."""
    latest: dict[str, str] = {}
    for m in obs.inbox:
        if m.kind is MessageKind.VOTE and m.sender != obs.agent:
            latest[m.sender] = m.content.strip()
    return list(latest.items())


def current_answer(p: Mapping, memory: AgentMemory) -> str:
    return memory.recall().get("answer", str(p["answer"]))


def _modal_dissent(votes: list[tuple[str, str]], own: str) -> tuple[str | None, int]:
    """Peer-majority answer and its support, or ``(None, 0)`` if ``own`` is already modal."""
    counts = Counter(a for _, a in votes)
    if not counts:
        return None, 0
    best = max(counts.values())
    if counts.get(own, 0) == best:
        return None, 0
    # ties resolve to the answer seen first in the inbox
    for _, a in votes:
        if counts[a] == best:
            return a, best
    return None, 0  # pragma: no cover


def _decide_sycophant(p: Mapping, memory: AgentMemory, obs: Observation, rng: random.Random) -> AgentDecision:
    q = float(p.get("q", 1.0))
    min_pressure = int(p.get("min_pressure", 1))
    own = current_answer(p, memory)
    candidate, pressure = _modal_dissent(_peer_votes(obs), own)
    switched = False
    if candidate is not None and pressure >= min_pressure:
        switched = rng.random() < q
    answer = candidate if switched else own
    msgs = [Message(obs.step, obs.agent, (BROADCAST,), answer, MessageKind.VOTE)]
    if p.get("elaborate"):
        if switched:
            text = f"I agree, building on that idea: {answer}."
        elif candidate is not None:
            text = f"However, we should also consider {own}."
        else:
            text = f"I propose {own}."
        msgs.append(Message(obs.step, obs.agent, (BROADCAST,), text, MessageKind.STATEMENT))
    return AgentDecision(tuple(msgs), memory_append=(f"answer: {answer}",))


def _decide_contrarian(p: Mapping, memory: AgentMemory, obs: Observation, rng: random.Random) -> AgentDecision:
    own = current_answer(p, memory)
    votes = Counter(a for _, a in _peer_votes(obs))
    answer = own
    if votes:
        majority = max(votes, key=lambda a: (votes[a], a))
        if majority == own:
            alternatives = [a for a in p.get("alternatives", []) if a != majority]
            answer = alternatives[0] if alternatives else f"not {majority}"
    msgs = (Message(obs.step, obs.agent, (BROADCAST,), answer, MessageKind.VOTE),)
    return AgentDecision(msgs, memory_append=(f"answer: {answer}",))


# -- LLM adapter contract ----------------------------------------------------

Transport = Callable[[list[dict]], str]
DecisionParser = Callable[[str, Observation], AgentDecision]
_TRANSPORTS: dict[str, Transport] = {}
_PARSERS: dict[str, DecisionParser] = {}


def register_transport(name: str, fn: Transport) -> None:
    _TRANSPORTS[name] = fn


def register_parser(name: str, fn: DecisionParser) -> None:
    _PARSERS[name] = fn


def build_llm_request(memory: AgentMemory, obs: Observation, question: str | None = None) -> list[dict]:
    """Ordered role-tagged messages: objective, memory digest, inbox."""
    inbox = "\n".join(f"[{m.kind.value}] {m.sender}: {m.content}" for m in obs.inbox) or "(no messages)"
    req = [
        {"role": "system", "content": obs.objective or f"You are agent {obs.agent}."},
        {"role": "user", "content": f"Memory:\n{memory.digest()}"},
        {"role": "user", "content": f"Step {obs.step}. Inbox:\n{inbox}"},
    ]
    if question is not None:
        req.append({"role": "user", "content": f"Probe question: {question}"})
    return req


def json_decision_parser(text: str, obs: Observation) -> AgentDecision:
    """Parse ``{"messages": [...], "action": {...}, "prediction": {...}, "remember": "..."}``."""
    try:
        d = json.loads(text)
        msgs = tuple(
            Message(obs.step, obs.agent, tuple(m.get("to", [BROADCAST])), str(m["content"]),
                    MessageKind(m.get("kind", "Statement")))
            for m in d.get("messages", [])
        )
        act = d.get("action")
        action = Action(act["label"], dict(act.get("args", {}))) if act else None
        remember = d.get("remember")
        return AgentDecision(msgs, action, d.get("prediction"), (remember,) if remember else ())
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise AgentError(f"could not parse adapter response: {exc}") from exc


register_parser("json", json_decision_parser)


def _call_transport(p: Mapping, request: list[dict]) -> str:
    name = p["transport"]
    try:
        fn = _TRANSPORTS[name]
    except KeyError:
        raise AgentError(f"no transport registered under {name!r}") from None
    try:
        return fn(request)
    except TimeoutError as exc:
        raise AgentError(f"transport {name!r} timed out") from exc
    except AgentError:
        raise
    except Exception as exc:
        raise AgentError(f"transport {name!r} failed: {exc}") from exc


def _decide_llm(p: Mapping, memory: AgentMemory, obs: Observation, rng: random.Random) -> AgentDecision:
    text = _call_transport(p, build_llm_request(memory, obs))
    parser = _PARSERS.get(p.get("parser", "json"))
    if parser is None:
        raise AgentError(f"no decision parser registered under {p.get('parser')!r}")
    return parser(text, obs)


_DISPATCH = {
    BehaviorKind.SCRIPTED: _decide_scripted,
    BehaviorKind.TABLE_STOCHASTIC: _decide_table,
    BehaviorKind.SYCOPHANT: _decide_sycophant,
    BehaviorKind.CONTRARIAN: _decide_contrarian,
    BehaviorKind.LLM_ADAPTER: _decide_llm,
}


def decide(behavior: BehaviorSpec, memory: AgentMemory, obs: Observation, rng: random.Random) -> AgentDecision:
    if obs.step < 0:
        raise ValueError("observation step must be >= 0")
    problems = behavior_violations(behavior, "params")
    if problems:
        raise AgentError("malformed behaviour parameters: " + "; ".join(map(str, problems)))
    try:
        return _DISPATCH[behavior.kind](behavior.params, memory, obs, rng)
    except AgentError:
        raise
    except (KeyError, TypeError, ValueError, re.error) as exc:
        raise AgentError(f"{behavior.kind.value} behaviour failed: {exc!r}") from exc


def respond(behavior: BehaviorSpec, memory: AgentMemory, obs: Observation, question: str, rng: random.Random) -> str:
    """Answer an out-of-band probe question without producing a decision."""
    p = behavior.params
    if behavior.kind is BehaviorKind.LLM_ADAPTER:
        return _call_transport(p, build_llm_request(memory, obs, question))
    for entry in p.get("probe", []):
        if entry.get("match", "").lower() in question.lower():
            return str(_render(entry["answer"], {**_context(obs, memory), "question": question}))
    if behavior.kind in (BehaviorKind.SYCOPHANT, BehaviorKind.CONTRARIAN):
        return f"My current answer is {current_answer(p, memory)}."
    return memory.digest()
