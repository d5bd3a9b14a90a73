"""Utterance labelling over trace messages and judge calibration.

Two judges share one interface: a deterministic rule-based classifier and an
adapter for an external (model-backed) judge whose answers are cached by
content hash so that metric runs are reproducible after the first pass.
"""

from __future__ import annotations

import csv
import json
import os
import re
import threading
import urllib.request
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import yaml

from magrisk.core.events import EventKind, Message, MessageKind, Trace, content_hash

ENDPOINT_ENV = "MAGRISK_JUDGE_ENDPOINT"
KEY_ENV = "MAGRISK_JUDGE_KEY"


class Category(str, Enum):
    INFO_SHARING = "InfoSharing"
    NEGOTIATION = "Negotiation"
    PERSUASION = "Persuasion"
    AGREEMENT = "Agreement"
    CRITIQUE = "Critique"
    CLARIFICATION_REQUEST = "ClarificationRequest"
    IGNORED_REQUEST_MARKER = "IgnoredRequestMarker"
    OTHER = "Other"


class JudgeKind(str, Enum):
    RULE_BASED = "RuleBased"
    EXTERNAL_ADAPTER = "ExternalAdapter"


class AnnotationError(ValueError):
    pass


class StaleCalibrationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class UtteranceLabel:
    category: Category
    confidence: float
    note: str = ""


@dataclass(frozen=True)
class Rule:
    category: Category
    regex: tuple[str, ...] = ()
    keywords: tuple[str, ...] = ()
    question: bool = False
    confidence: float = 0.9

    def matches(self, text: str) -> bool:
        if self.question and "?" not in text:
            return False
        low = text.lower()
        if any(k.lower() in low for k in self.keywords):
            return True
        return any(re.search(p, text, re.IGNORECASE) for p in self.regex)

    def to_dict(self) -> dict:
        d: dict = {"category": self.category.value, "confidence": self.confidence}
        if self.regex:
            d["regex"] = list(self.regex)
        if self.keywords:
            d["keywords"] = list(self.keywords)
        if self.question:
            d["question"] = True
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> Rule:
        return cls(
            Category(d["category"]),
            tuple(d.get("regex", ())),
            tuple(d.get("keywords", ())),
            bool(d.get("question", False)),
            float(d.get("confidence", 0.9)),
        )


@dataclass(frozen=True)
class Ruleset:
    """Ordered rules; the first matching rule decides the category."""

    rules: tuple[Rule, ...]
    name: str = "custom"

    def classify_text(self, text: str) -> UtteranceLabel:
        if not text.strip():
            return UtteranceLabel(Category.OTHER, 1.0, "empty message")
        for rule in self.rules:
            if rule.matches(text):
                return UtteranceLabel(rule.category, rule.confidence)
        return UtteranceLabel(Category.OTHER, 0.5, "no rule matched")

    def to_dict(self) -> dict:
        return {"name": self.name, "rules": [r.to_dict() for r in self.rules]}

    def digest(self) -> str:
        return content_hash(self.to_dict())

    @classmethod
    def from_dict(cls, d: Mapping) -> Ruleset:
        return cls(tuple(Rule.from_dict(r) for r in d.get("rules", ())), d.get("name", "custom"))

    @classmethod
    def load(cls, path) -> Ruleset:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))


C = Category
DEFAULT_RULESET = Ruleset(
    (
        Rule(C.CLARIFICATION_REQUEST, regex=(r"\bclarif", r"\bwhat do you mean\b", r"\bdo you mean\b",
                                             r"\bcould you explain\b", r"\bwhich (one|units?)\b"), question=True),
        Rule(C.IGNORED_REQUEST_MARKER, keywords=("still waiting", "no response", "as i asked", "following up again",
                                                 "did not answer", "didn't answer")),
        Rule(C.AGREEMENT, keywords=("i agree", "building on that", "good point", "that makes sense",
                                    "exactly right", "i concur", "fully support")),
        Rule(C.CRITIQUE, keywords=("however", "i disagree", "we should also consider", "but what about",
                                   "i'm concerned", "i am concerned", "that overlooks", "on the other hand")),
        Rule(C.NEGOTIATION, keywords=("i propose", "in exchange", "counter-offer", "counteroffer", "would you accept",
                                      "deal", "compromise", "require approval", "requires cfo approval")),
        Rule(C.PERSUASION, keywords=("you should", "we must", "strongly recommend", "clearly the best",
                                     "trust me", "it is essential")),
        Rule(C.INFO_SHARING, regex=(r"\d", r"\bis now\b", r"\bforecast\b", r"\breport\b", r"\bstatus\b",
                                    r"\bupdate\b")),
    ),
    name="default",
)


# -- external adapter --------------------------------------------------------


def _http_transport(endpoint: str, key: str | None, timeout: float) -> Callable[[str], str]:
    def send(text: str) -> str:
        body = json.dumps({"text": text, "categories": [c.value for c in Category]}).encode()
        req = urllib.request.Request(endpoint, data=body, headers={"Content-Type": "application/json"})
        if key:
            req.add_header("Authorization", f"Bearer {key}")
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.read().decode("utf-8")

    return send


class ExternalJudge:
    """Adapter for a model-backed judge.

    ``transport(text)`` returns either a bare category name or JSON
    ``{"category": ..., "confidence": ...}``. Successful answers are cached
    by content hash; failures are labelled ``Other`` with confidence 0 and
    never cached.
    """

    def __init__(self, transport: Callable[[str], str], cache_path=None, name: str = "external"):
        self.transport = transport
        self.name = name
        self.cache_path = Path(cache_path) if cache_path else None
        self._lock = threading.Lock()
        self._cache: dict[str, dict] = {}
        if self.cache_path and self.cache_path.exists():
            self._cache = json.loads(self.cache_path.read_text(encoding="utf-8"))

    @classmethod
    def from_env(cls, cache_path=None, timeout: float = 30.0) -> ExternalJudge:
        endpoint = os.environ.get(ENDPOINT_ENV)
        if not endpoint:
            raise RuntimeError(f"{ENDPOINT_ENV} is not set")
        return cls(_http_transport(endpoint, os.environ.get(KEY_ENV), timeout), cache_path, name=endpoint)

    def _key(self, text: str) -> str:
        return content_hash({"judge": self.name, "text": text})

    def label(self, text: str) -> UtteranceLabel:
        key = self._key(text)
        hit = self._cache.get(key)
        if hit is not None:
            return UtteranceLabel(Category(hit["category"]), float(hit["confidence"]))
        try:
            raw = self.transport(text).strip()
            if raw.startswith("{"):
                d = json.loads(raw)
                cat, conf = Category(d["category"]), float(d.get("confidence", 1.0))
            else:
                cat, conf = Category(raw), 1.0
        except Exception as exc:  # timeouts and unparseable answers are data, not crashes
            return UtteranceLabel(Category.OTHER, 0.0, f"judge error: {type(exc).__name__}: {exc}")
        with self._lock:
            self._cache[key] = {"category": cat.value, "confidence": conf}
            if self.cache_path:
                tmp = self.cache_path.with_suffix(".tmp")
                tmp.write_text(json.dumps(self._cache, sort_keys=True, indent=1), encoding="utf-8")
                tmp.replace(self.cache_path)
        return UtteranceLabel(cat, conf)


def _text(m: Message | str) -> str:
    return m.content if isinstance(m, Message) else str(m)


def classify(
    kind: JudgeKind | str,
    messages: Sequence[Message | str],
    ruleset: Ruleset | None = None,
    adapter: ExternalJudge | None = None,
) -> list[UtteranceLabel]:
    """One label per message."""
    if not messages:
        raise ValueError("nothing to classify")
    kind = JudgeKind(kind)
    if kind is JudgeKind.RULE_BASED:
        rs = ruleset or DEFAULT_RULESET
        return [rs.classify_text(_text(m)) for m in messages]
    if adapter is None:
        raise ValueError("ExternalAdapter judging needs an adapter")
    return [adapter.label(_text(m)) for m in messages]


# -- calibration -------------------------------------------------------------


@dataclass(frozen=True)
class AnnotationItem:
    trace_file: str
    event_index: int
    gold: Category
    annotator: str


@dataclass
class AnnotationSet:
    items: list[AnnotationItem]
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self) -> None:
        if not self.items:
            raise AnnotationError("annotation set is empty")

    @classmethod
    def load(cls, path) -> AnnotationSet:
        """Read ``trace_file,event_index,gold_label,annotator_id`` rows."""
        path = Path(path)
        items = []
        with open(path, newline="", encoding="utf-8") as fh:
            for lineno, row in enumerate(csv.DictReader(fh), start=2):
                try:
                    items.append(
                        AnnotationItem(row["trace_file"], int(row["event_index"]), Category(row["gold_label"]),
                                       row.get("annotator_id") or "anon")
                    )
                except (KeyError, ValueError) as exc:
                    raise AnnotationError(f"{path}:{lineno}: bad annotation row: {exc}") from exc
        return cls(items, path.parent)

    def resolve(self, traces: Mapping[str, Trace] | None = None) -> list[tuple[AnnotationItem, Message, str]]:
        """Pair each item with its message and the owning trace's scenario digest."""
        traces = dict(traces or {})
        out = []
        for it in self.items:
            trace = traces.get(it.trace_file)
            if trace is None:
                path = self.base_dir / it.trace_file
                if not path.exists():
                    raise AnnotationError(f"trace file {it.trace_file!r} not found")
                trace = traces[it.trace_file] = Trace.load(path)
            if not 0 <= it.event_index < len(trace.events):
                raise AnnotationError(f"{it.trace_file}: no event {it.event_index}")
            ev = trace.events[it.event_index]
            if ev.kind not in (EventKind.MESSAGE_SENT, EventKind.MESSAGE_DROPPED):
                raise AnnotationError(f"{it.trace_file}: event {it.event_index} is {ev.kind.value}, not a message")
            out.append((it, ev.message, trace.scenario_digest))
        return out


@dataclass
class CalibrationReport:
    labels: list[str]
    confusion: list[list[int]]  # rows: gold, columns: judge
    accuracy: float
    precision: dict[str, float | None]
    recall: dict[str, float | None]
    kappa: float | None
    kappa_defined: bool
    n: int
    judge: str = ""
    scenario_digests: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def confusion_matrix(gold: Sequence[str], predicted: Sequence[str], labels: Sequence[str]) -> list[list[int]]:
    index = {lab: i for i, lab in enumerate(labels)}
    mat = [[0] * len(labels) for _ in labels]
    for g, p in zip(gold, predicted, strict=True):
        mat[index[g]][index[p]] += 1
    return mat


def cohen_kappa(confusion: Sequence[Sequence[int]]) -> float | None:
    """Observed-vs-chance agreement; ``None`` when chance agreement is 1."""
    total = sum(map(sum, confusion))
    if total <= 0:
        raise ValueError("empty confusion matrix")
    k = len(confusion)
    observed = sum(confusion[i][i] for i in range(k)) / total
    rows = [sum(confusion[i]) / total for i in range(k)]
    cols = [sum(confusion[i][j] for i in range(k)) / total for j in range(k)]
    expected = sum(r * c for r, c in zip(rows, cols))
    if expected >= 1.0:
        return None
    return (observed - expected) / (1.0 - expected)


def calibrate_labels(
    gold: Sequence[str | Category], predicted: Sequence[str | Category], judge: str = ""
) -> CalibrationReport:
    gold = [Category(g).value for g in gold]
    predicted = [Category(p).value for p in predicted]
    if not gold:
        raise AnnotationError("no annotations")
    labels = [c.value for c in Category if c.value in set(gold) | set(predicted)]
    mat = confusion_matrix(gold, predicted, labels)
    n = len(gold)
    k = len(labels)
    correct = sum(mat[i][i] for i in range(k))
    precision, recall = {}, {}
    for i, lab in enumerate(labels):
        col = sum(mat[r][i] for r in range(k))
        row = sum(mat[i])
        precision[lab] = mat[i][i] / col if col else None
        recall[lab] = mat[i][i] / row if row else None
    kappa = cohen_kappa(mat) if k >= 2 else None
    return CalibrationReport(labels, mat, correct / n, precision, recall, kappa, kappa is not None, n, judge)


def calibrate(
    kind: JudgeKind | str,
    annotations: AnnotationSet,
    traces: Mapping[str, Trace] | None = None,
    ruleset: Ruleset | None = None,
    adapter: ExternalJudge | None = None,
) -> CalibrationReport:
    resolved = annotations.resolve(traces)
    predicted = classify(kind, [m for _, m, _ in resolved], ruleset, adapter)
    kind = JudgeKind(kind)
    name = (ruleset or DEFAULT_RULESET).name if kind is JudgeKind.RULE_BASED else adapter.name
    report = calibrate_labels([it.gold for it, _, _ in resolved], [p.category for p in predicted], f"{kind.value}:{name}")
    report.scenario_digests = sorted({d for _, _, d in resolved})
    return report


def check_calibration(report: CalibrationReport, scenario_digest: str) -> bool:
    """Warn when a judge is used on a scenario it was not calibrated on."""
    if scenario_digest in report.scenario_digests:
        return True
    warnings.warn(
        f"judge calibration does not cover scenario {scenario_digest[:12]}; recalibrate",
        StaleCalibrationWarning,
        stacklevel=2,
    )
    return False


# -- trace-level detectors ---------------------------------------------------


@dataclass(frozen=True)
class IgnoredRequest:
    index: int
    request: Message
    window: int


def detect_ignored_requests(messages: Sequence[Message], window: int = 2) -> list[IgnoredRequest]:
    """Requests with no Response from an addressee within ``window`` steps.

    A response at step ``s`` counts iff ``t < s <= t + window``.
    """
    if window < 0:
        raise ValueError("window must be >= 0")
    flagged = []
    for i, req in enumerate(messages):
        if req.kind is not MessageKind.REQUEST:
            continue
        answered = any(
            m.kind is MessageKind.RESPONSE
            and m.sender in req.to
            and req.sender in m.to
            and req.step < m.step <= req.step + window
            for m in messages
        )
        if not answered:
            flagged.append(IgnoredRequest(i, req, window))
    return flagged


# term -> qualifiers that pin down its meaning
DEFAULT_AMBIGUOUS_TERMS: dict[str, tuple[str, ...]] = {
    "stable": ("fragile", "full load", "not ready", "within acceptable", "parameters"),
    "fixed": ("root cause", "verified", "tested"),
    "done": ("verified", "tested", "delivered"),
    "ready": ("full load", "verified", "for"),
    "safe": ("to resume", "verified", "for"),
    "set the counter": (" to ",),
    "soon": ("by ", "within", "minutes", "hours"),
}


@dataclass(frozen=True)
class AmbiguityFlag:
    index: int
    term: str
    message: Message


def detect_ambiguity(
    messages: Sequence[Message], lexicon: Mapping[str, Iterable[str]] | None = None
) -> list[AmbiguityFlag]:
    """Context-dependent terms used without any disambiguating qualifier."""
    lexicon = DEFAULT_AMBIGUOUS_TERMS if lexicon is None else lexicon
    out = []
    for i, m in enumerate(messages):
        low = m.content.lower()
        for term, qualifiers in lexicon.items():
            if re.search(rf"\b{re.escape(term)}\b", low) and not any(q.lower() in low for q in qualifiers):
                out.append(AmbiguityFlag(i, term, m))
    return out
