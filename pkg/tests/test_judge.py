from __future__ import annotations

import csv
import json
import warnings

import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.metrics import cohen_kappa_score, confusion_matrix as sk_confusion

from conftest import echo_pair
from magrisk.core.events import EventKind, Message, MessageKind
from magrisk.engine.runner import run_once
from magrisk.judge import (
    DEFAULT_RULESET,
    AnnotationError,
    AnnotationSet,
    Category,
    ExternalJudge,
    JudgeKind,
    Rule,
    Ruleset,
    StaleCalibrationWarning,
    calibrate,
    calibrate_labels,
    check_calibration,
    classify,
    cohen_kappa,
    confusion_matrix,
    detect_ambiguity,
    detect_ignored_requests,
)

CATS = [c.value for c in Category]


@pytest.mark.parametrize("text,category", [
    ("Could you clarify which units you mean?", Category.CLARIFICATION_REQUEST),
    ("Still waiting on the numbers, as I asked yesterday.", Category.IGNORED_REQUEST_MARKER),
    ("I agree, building on that idea.", Category.AGREEMENT),
    ("However, we should also consider cost.", Category.CRITIQUE),
    ("I propose a compromise: split the order.", Category.NEGOTIATION),
    ("You should trust me on this.", Category.PERSUASION),
    ("Forecast update: 10.5K units.", Category.INFO_SHARING),
    ("hmm", Category.OTHER),
])
def test_default_rules(text, category):
    assert DEFAULT_RULESET.classify_text(text).category is category


def test_clarification_needs_a_question_mark():
    assert DEFAULT_RULESET.classify_text("I will clarify later").category is not Category.CLARIFICATION_REQUEST


def test_empty_and_unmatched_messages():
    empty = DEFAULT_RULESET.classify_text("   ")
    assert empty.category is Category.OTHER and empty.confidence == 1.0
    assert DEFAULT_RULESET.classify_text("zzz").confidence == 0.5


def test_classify_rejects_empty_input():
    with pytest.raises(ValueError):
        classify(JudgeKind.RULE_BASED, [])


def test_ruleset_yaml_round_trip(tmp_path):
    rs = Ruleset((Rule(Category.AGREEMENT, keywords=("yep",)),), name="tiny")
    path = tmp_path / "rules.yaml"
    import yaml

    path.write_text(yaml.safe_dump(rs.to_dict()))
    again = Ruleset.load(path)
    assert again.digest() == rs.digest()
    assert again.classify_text("yep").category is Category.AGREEMENT


# -- external adapter ----------------------------------------------------------


def test_external_judge_caches_successes(tmp_path):
    calls = []

    def transport(text):
        calls.append(text)
        return json.dumps({"category": "Agreement", "confidence": 0.8})

    cache = tmp_path / "cache.json"
    judge = ExternalJudge(transport, cache, name="fake")
    assert judge.label("yes").category is Category.AGREEMENT
    assert judge.label("yes").confidence == 0.8
    assert calls == ["yes"]
    reloaded = ExternalJudge(lambda t: pytest.fail("should hit cache"), cache, name="fake")
    assert reloaded.label("yes").category is Category.AGREEMENT


def test_external_judge_errors_are_not_cached():
    attempts = []

    def flaky(text):
        attempts.append(text)
        raise TimeoutError("slow")

    judge = ExternalJudge(flaky, name="flaky")
    first = judge.label("x")
    assert first.category is Category.OTHER and first.confidence == 0.0 and "judge error" in first.note
    judge.label("x")
    assert len(attempts) == 2


def test_external_judge_accepts_bare_category():
    judge = ExternalJudge(lambda t: "Critique")
    assert classify(JudgeKind.EXTERNAL_ADAPTER, ["x"], adapter=judge)[0].category is Category.CRITIQUE


def test_external_judge_from_env_needs_endpoint(monkeypatch):
    monkeypatch.delenv("MAGRISK_JUDGE_ENDPOINT", raising=False)
    with pytest.raises(RuntimeError):
        ExternalJudge.from_env()


# -- calibration ---------------------------------------------------------------


labels = st.lists(st.sampled_from(CATS[:4]), min_size=2, max_size=60)


@given(st.data())
def test_kappa_and_confusion_match_sklearn(data):
    gold = data.draw(labels)
    pred = data.draw(st.lists(st.sampled_from(CATS[:4]), min_size=len(gold), max_size=len(gold)))
    report = calibrate_labels(gold, pred)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # sklearn complains about single-label inputs
        expected = sk_confusion(gold, pred, labels=report.labels).tolist()
    assert report.confusion == expected
    assert report.accuracy == pytest.approx(sum(g == p for g, p in zip(gold, pred)) / len(gold))
    if report.kappa_defined:
        assert report.kappa == pytest.approx(cohen_kappa_score(gold, pred), abs=1e-12)


def test_kappa_undefined_when_chance_agreement_is_total():
    report = calibrate_labels(["Agreement"] * 5, ["Agreement"] * 5)
    assert report.accuracy == 1.0 and report.kappa is None and not report.kappa_defined
    assert cohen_kappa([[5]]) is None


def test_confusion_matrix_rows_are_gold():
    assert confusion_matrix(["a", "a", "b"], ["a", "b", "b"], ["a", "b"]) == [[1, 1], [0, 1]]


def test_precision_recall():
    r = calibrate_labels(["Agreement", "Agreement", "Critique"], ["Agreement", "Critique", "Critique"])
    assert r.precision == {"Agreement": 1.0, "Critique": 0.5}
    assert r.recall == {"Agreement": 0.5, "Critique": 1.0}


def _annotated_corpus(tmp_path, flip=lambda i, c: c):
    trace = run_once(echo_pair(), 0).trace
    path = tmp_path / "trace.jsonl"
    trace.save(path)
    rows = []
    for i, e in enumerate(trace.events):
        if e.kind is EventKind.MESSAGE_SENT:
            gold = DEFAULT_RULESET.classify_text(e.message.content).category.value
            rows.append({"trace_file": "trace.jsonl", "event_index": i, "gold_label": flip(i, gold),
                         "annotator_id": "h1"})
    csv_path = tmp_path / "ann.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, ["trace_file", "event_index", "gold_label", "annotator_id"])
        w.writeheader()
        w.writerows(rows)
    return csv_path, trace


def test_calibrate_from_annotation_file(tmp_path):
    csv_path, trace = _annotated_corpus(tmp_path)
    report = calibrate(JudgeKind.RULE_BASED, AnnotationSet.load(csv_path))
    assert report.accuracy == 1.0 and report.n == 2
    assert report.scenario_digests == [trace.scenario_digest]
    assert check_calibration(report, trace.scenario_digest)
    with pytest.warns(StaleCalibrationWarning):
        assert not check_calibration(report, "other-scenario")


def test_annotation_errors(tmp_path):
    csv_path, trace = _annotated_corpus(tmp_path)
    text = csv_path.read_text().replace("trace.jsonl", "missing.jsonl")
    (tmp_path / "bad.csv").write_text(text)
    with pytest.raises(AnnotationError):
        AnnotationSet.load(tmp_path / "bad.csv").resolve()
    first_non_message = next(i for i, e in enumerate(trace.events) if e.kind is not EventKind.MESSAGE_SENT)
    (tmp_path / "bad2.csv").write_text(
        f"trace_file,event_index,gold_label,annotator_id\ntrace.jsonl,{first_non_message},Other,h\n")
    with pytest.raises(AnnotationError):
        AnnotationSet.load(tmp_path / "bad2.csv").resolve()
    (tmp_path / "bad3.csv").write_text("trace_file,event_index,gold_label,annotator_id\ntrace.jsonl,0,Nonsense,h\n")
    with pytest.raises(AnnotationError):
        AnnotationSet.load(tmp_path / "bad3.csv")


# -- detectors -----------------------------------------------------------------


def req(step, sender, to, text="Can you send the report?"):
    return Message(step, sender, (to,), text, MessageKind.REQUEST)


def resp(step, sender, to, text="Here it is."):
    return Message(step, sender, (to,), text, MessageKind.RESPONSE)


def test_answered_request_is_not_flagged():
    msgs = [req(0, "a", "b"), resp(2, "b", "a")]
    assert detect_ignored_requests(msgs, window=2) == []


def test_response_outside_window_or_from_stranger_is_ignored():
    assert [f.index for f in detect_ignored_requests([req(0, "a", "b"), resp(3, "b", "a")], window=2)] == [0]
    assert [f.index for f in detect_ignored_requests([req(0, "a", "b"), resp(1, "c", "a")])] == [0]
    assert [f.index for f in detect_ignored_requests([req(0, "a", "b"), resp(0, "b", "a")])] == [0]


@given(st.integers(min_value=0, max_value=5), st.integers(min_value=0, max_value=8))
def test_ignored_request_window_boundary(window, delay):
    flagged = detect_ignored_requests([req(0, "a", "b"), resp(delay, "b", "a")], window=window)
    assert bool(flagged) == (not 0 < delay <= window)


def test_ambiguity_flags_unqualified_terms_only():
    msgs = [
        Message(0, "grid", ("comms",), "Substation 7 is now stable."),
        Message(1, "grid", ("comms",), "Stable but still fragile; not ready for full load."),
        Message(2, "ops", ("all",), "The fix is done and verified."),
    ]
    flags = [(f.index, f.term) for f in detect_ambiguity(msgs)]
    assert flags == [(0, "stable")]


def test_ambiguity_custom_lexicon():
    msgs = [Message(0, "a", ("b",), "Ship it ASAP")]
    assert [f.term for f in detect_ambiguity(msgs, {"asap": ("by ",)})] == ["asap"]
