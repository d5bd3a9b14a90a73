from __future__ import annotations

import csv
import itertools
import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import chatter_swarm, coin_spec, echo_pair
from magrisk.core.events import Event, EventKind, Message, MessageKind, Trace
from magrisk.core.scenario import TopologyKind
from magrisk.engine import run_ensemble
from magrisk.engine.runner import run_once
from magrisk.metrics import (
    HashingEmbedder,
    LinearCost,
    OutcomeSpace,
    ResponseItem,
    ResponseSet,
    SVOCategory,
    SVOChoice,
    Trial,
    UnknownTaintLabel,
    abandonment_rate,
    apply_safety_factor,
    brier,
    cascade_stats,
    claim_consistency,
    cooperation_index,
    coordination_stats,
    disagreement_rate,
    dominates,
    is_pareto_optimal,
    pairwise_similarity,
    pareto_frontier,
    planning_rubric_prompt,
    response_entropy,
    salient_order,
    sensitivity_profile,
    similarity_clusters,
    svo_classify,
    table_text,
    tom_score,
    write_table,
)
from magrisk.metrics.report import METRIC_NAMES, ensemble_metrics

# -- oracles ------------------------------------------------------------------


def brute_frontier(outcomes) -> set[str]:
    out = set()
    for lbl, u in outcomes:
        dominated = False
        for _, v in outcomes:
            if all(x >= y for x, y in zip(v, u)) and any(x > y for x, y in zip(v, u)):
                dominated = True
                break
        if not dominated:
            out.add(lbl)
    return out


def brute_cosine(vectors):
    n = len(vectors)
    out = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            dot = sum(a * b for a, b in zip(vectors[i], vectors[j]))
            ni = math.sqrt(sum(a * a for a in vectors[i]))
            nj = math.sqrt(sum(b * b for b in vectors[j]))
            out[i][j] = dot / (ni * nj)
    return out


def hand_entropy(sizes) -> float:
    n = sum(sizes)
    return -sum(s / n * math.log2(s / n) for s in sizes)


def rs_of(vectors) -> ResponseSet:
    return ResponseSet(tuple(ResponseItem(f"a{i}", "", tuple(v)) for i, v in enumerate(vectors)))


# -- diversity ----------------------------------------------------------------


vec = st.lists(st.floats(min_value=-10, max_value=10, allow_nan=False, width=32), min_size=3, max_size=3).filter(
    lambda v: math.sqrt(sum(x * x for x in v)) > 1e-3)


@given(st.lists(vec, min_size=2, max_size=8))
def test_cosine_matches_brute_force(vectors):
    got = pairwise_similarity(rs_of(vectors)).matrix
    want = brute_cosine(vectors)
    for i in range(len(vectors)):
        assert got[i, i] == 1.0
        for j in range(len(vectors)):
            assert got[i, j] == pytest.approx(min(1.0, max(-1.0, want[i][j])), abs=1e-9)
            assert got[i, j] == got[j, i]


def test_identical_texts_are_exactly_similar():
    rs = ResponseSet.from_texts([("a", "approve the payment now"), ("b", "Approve the payment, NOW")])
    assert pairwise_similarity(rs).mean_off_diagonal == 1.0


def test_zero_vector_and_singleton_rejected():
    with pytest.raises(ValueError):
        pairwise_similarity(rs_of([[1, 0], [0, 0]]))
    with pytest.raises(ValueError):
        pairwise_similarity(rs_of([[1, 0]]))


def test_hashing_embedder_counts_tokens():
    emb = HashingEmbedder(dim=64)
    v = emb("go go stop")
    assert sum(v) == 3 and v[emb.bucket("go")] >= 2


@pytest.mark.parametrize("sizes", [[5], [1, 1, 1, 1], [2, 3], [1, 2, 3, 4], [7, 1]])
def test_entropy_matches_hand_formula(sizes):
    vectors = []
    for cluster, size in enumerate(sizes):
        axis = [0.0] * len(sizes)
        axis[cluster] = 1.0
        vectors += [axis] * size
    h = response_entropy(rs_of(vectors))
    assert h == pytest.approx(hand_entropy(sizes), abs=1e-9)
    assert h >= 0.0


def test_clusters_are_single_link():
    # a~b and b~c but a is far from c: single link joins all three
    a, b, c = [1.0, 0.0], [math.cos(0.25), math.sin(0.25)], [math.cos(0.5), math.sin(0.5)]
    assert similarity_clusters(rs_of([a, b, c]), threshold=0.96) == [[0, 1, 2]]


@given(st.lists(st.sampled_from("abc"), min_size=2, max_size=12))
def test_disagreement_rate_matches_pair_count(stances):
    pairs = list(itertools.combinations(stances, 2))
    assert disagreement_rate(stances) == pytest.approx(sum(x != y for x, y in pairs) / len(pairs))


def test_response_set_from_trace_takes_last_message_per_agent():
    trace = run_once(chatter_swarm(3, 3), 0).trace
    rs = ResponseSet.from_trace(trace)
    assert sorted(i.agent for i in rs.items) == ["s0", "s1", "s2"]
    last = {m.sender: m.content for m in trace.messages()}
    assert {i.agent: i.content for i in rs.items} == last


# -- negotiation --------------------------------------------------------------


def random_space(rng: random.Random, n: int, k: int, grid: int = 6) -> OutcomeSpace:
    return OutcomeSpace.of({f"o{i}": [rng.randint(0, grid) for _ in range(k)] for i in range(n)})


@given(st.integers(min_value=0, max_value=10**6), st.integers(min_value=1, max_value=60),
       st.integers(min_value=1, max_value=5))
def test_pareto_matches_brute_force(seed, n, k):
    space = random_space(random.Random(seed), n, k)
    assert pareto_frontier(space) == brute_frontier(space.outcomes)


@given(st.integers(min_value=0, max_value=10**6))
def test_frontier_outcomes_are_optimal(seed):
    space = random_space(random.Random(seed), 20, 3)
    front = pareto_frontier(space)
    for lbl, _ in space.outcomes:
        assert is_pareto_optimal(space, lbl) == (lbl in front)


def test_dominance_is_strict():
    assert dominates((2, 2), (2, 1)) and not dominates((2, 2), (2, 2)) and not dominates((3, 0), (0, 3))


def test_outcome_space_validation():
    with pytest.raises(ValueError):
        OutcomeSpace.of({})
    with pytest.raises(ValueError):
        OutcomeSpace.of({"a": [1, 2], "b": [1]})
    with pytest.raises(ValueError):
        OutcomeSpace.of({"a": [float("inf")]})


def test_cooperation_index_scales_collective_utility():
    space = OutcomeSpace.of({"best": [5, 5], "worst": [0, 2], "mid": [3, 3]})
    assert cooperation_index([5, 5], space) == 1.0
    assert cooperation_index([0, 2], space) == 0.0
    assert cooperation_index([3, 3], space) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        cooperation_index([1, 1], OutcomeSpace.of({"a": [1, 1], "b": [2, 0]}))


@pytest.mark.parametrize("other,category", [(-10, SVOCategory.COMPETITIVE), (0, SVOCategory.INDIVIDUALISTIC),
                                            (10, SVOCategory.PROSOCIAL)])
def test_svo_bands(other, category):
    choice = SVOChoice(((10, other),), 0)
    assert svo_classify([choice]).category is category


def test_svo_beyond_prosocial_band_is_flagged():
    result = svo_classify([SVOChoice(((1, 10),), 0)])
    assert result.category is SVOCategory.PROSOCIAL and result.beyond_prosocial
    assert result.angle == pytest.approx(math.degrees(math.atan2(10, 1)))


def test_svo_validates_choice_index():
    with pytest.raises(ValueError):
        SVOChoice(((1, 1),), 3)


# -- theory of mind -----------------------------------------------------------


def _tom_trace(predictions, actions) -> Trace:
    t = Trace("d", 0)
    seq = 0
    rows = [(s, EventKind.AGENT_INTERNAL, {"agent": a, "what": "prediction", "prediction": p})
            for s, a, p in predictions]
    rows += [(s, EventKind.ACTION_TAKEN, {"agent": a, "action": {"label": lbl, "args": {}}, "taint": []})
             for s, a, lbl in actions]
    for s, kind, data in sorted(rows, key=lambda r: (r[0], r[1] is EventKind.ACTION_TAKEN)):
        t.append(Event(s, seq, kind, data))
        seq += 1
    t.append(Event(9, seq, EventKind.RUN_ENDED, {"status": "Success"}))
    return t


def test_tom_accuracy_and_brier():
    trace = _tom_trace(
        [(0, "a", {"b": "buy"}), (1, "a", {"b": {"sell": 0.6, "buy": 0.4}}), (1, "b", {"a": "hold"})],
        [(1, "b", "buy"), (2, "b", "sell")],
    )
    score = tom_score(trace)
    assert score.agents["a"].resolved == 2 and score.agents["a"].accuracy == 1.0
    assert score.agents["a"].brier == pytest.approx(0.4 ** 2 + 0.4 ** 2)
    assert score.agents["b"].predictions == 1 and score.agents["b"].resolved == 0
    assert score.agents["b"].accuracy is None


def test_tom_no_predictions():
    assert tom_score(run_once(echo_pair(), 0).trace).no_data


def test_brier_counts_unlisted_actual():
    assert brier({"x": 1.0}, "y") == 2.0
    assert brier({"x": 1.0}, "x") == 0.0


# -- conformity ----------------------------------------------------------------


def test_abandonment_curve_and_threshold():
    trials = [Trial("A", True, 1, "A"), Trial("A", True, 2, "B"), Trial("A", True, 2, "A"),
              Trial("A", True, 3, "B"), Trial("A", False, 3, "A")]
    res = abandonment_rate(trials)
    assert res.curve == {1: 0.0, 2: 0.5, 3: 1.0}
    assert res.threshold == 2
    assert res.rate == pytest.approx(2 / 4) and res.n == 4


def test_abandonment_without_correct_trials():
    assert abandonment_rate([Trial("A", False, 1, "B")]).rate is None


# -- reliability ---------------------------------------------------------------


@given(st.floats(min_value=0, max_value=1), st.floats(min_value=1, max_value=1e6))
def test_safety_factor_properties(p, n):
    out = apply_safety_factor(p, n)
    assert 0.0 <= out <= 1.0
    assert out == min(1.0, p * n)
    assert apply_safety_factor(p, n * 2) >= out


@pytest.mark.parametrize("p,n", [(-0.1, 2), (1.1, 2), (0.5, 0.5)])
def test_safety_factor_rejects_bad_input(p, n):
    with pytest.raises(ValueError):
        apply_safety_factor(p, n)


def test_sensitivity_profile_over_variants():
    prof = sensitivity_profile([coin_spec(1.0), coin_spec(0.0)], n=5)
    assert prof.per_variant == [1.0, 0.0]
    assert prof.mean == 0.5 and prof.std == 0.5 and prof.consistency == 0.5 and prof.n_runs == 10


def test_linear_cost():
    cost = LinearCost.from_dict({"buy": {"arg": "units", "rate": 2.5}})
    assert cost("buy", {"units": "10K"}) == 25_000.0
    assert cost("sell", {"units": 5}) == 0.0
    assert LinearCost.from_dict(cost.to_dict()) == cost


def test_cascade_stats_unknown_label():
    with pytest.raises(UnknownTaintLabel):
        cascade_stats(run_once(echo_pair(), 0).trace, "nothing")


# -- coordination & consistency -----------------------------------------------


def test_coordination_stats_on_echo():
    stats = coordination_stats(run_once(echo_pair(), 0).trace)
    assert stats.task_completion and stats.time_to_success is not None
    assert stats.rounds == 3 and stats.impasses == 0
    assert sum(stats.category_distribution.values()) == pytest.approx(1.0)


def test_coordination_needs_ended_trace():
    with pytest.raises(ValueError):
        coordination_stats(Trace("d", 0))


def test_claim_consistency_flags_contradictions():
    t = Trace("d", 0)
    rows = [
        (0, EventKind.AGENT_INTERNAL, {"agent": "a", "what": "memory", "memory": [[0, "answer: X"]]}),
        (0, EventKind.AGENT_INTERNAL, {"agent": "b", "what": "memory", "memory": [[0, "answer: Y"]]}),
        (0, EventKind.MESSAGE_SENT, {"message": Message(0, "a", ("b",), "X", MessageKind.VOTE).to_dict()}),
        (0, EventKind.MESSAGE_SENT, {"message": Message(0, "b", ("a",), "Z", MessageKind.VOTE).to_dict()}),
        (0, EventKind.RUN_ENDED, {"status": "Success"}),
    ]
    for seq, (step, kind, data) in enumerate(rows):
        t.append(Event(step, seq, kind, data))
    report = claim_consistency(t)
    assert report.claims == {"a": 1, "b": 1}
    assert report.contradictions == {"a": 0, "b": 1}


def test_claim_consistency_skips_external_agents():
    from magrisk.scenarios import load_scenario

    pkg = load_scenario("strategist-conformity")
    report = claim_consistency(pkg.run().trace, pkg.spec)
    assert report.unavailable == [] and sum(report.contradictions.values()) == 0
    assert report.claims["trade_shows"] >= 1


def test_planning_rubric_prompt_mentions_transcript():
    assert "TRANSCRIPT-XYZ" in planning_rubric_prompt("TRANSCRIPT-XYZ")


# -- reporting -----------------------------------------------------------------


def test_table_text_has_header(tmp_path):
    path = write_table(tmp_path / "t.csv", ["a", "b"], [[1, 2], [3, 4]])
    rows = list(csv.reader(path.open()))
    assert rows == [["a", "b"], ["1", "2"], ["3", "4"]]
    assert table_text(["a"], [[1]]).splitlines() == ["a", "1"]


def test_salient_order_follows_failure_map():
    from magrisk.scenarios import load_scenario

    spec = load_scenario("fraud-monoculture").spec
    order = salient_order(spec, ["coordination", "entropy", "tom"])
    assert order[0] == "entropy"
    assert spec.topology.kind is TopologyKind.SWARM


def test_ensemble_metrics_for_every_name():
    from magrisk.scenarios import load_scenario

    for name, metrics in (("fraud-monoculture", ("similarity", "entropy", "disagreement")),
                          ("supply-chain-cascade", ("cascade",)),
                          ("power-grid-ambiguity", ("ambiguity", "ignored_requests")),
                          ("retail-tom", ("tom", "coordination"))):
        pkg = load_scenario(name)
        ens = run_ensemble(pkg.spec, n=2, seed_base=pkg.seed)
        summary, rows = ensemble_metrics(metrics, pkg.spec, [r.trace for r in ens.runs])
        assert set(summary) == set(metrics)
        assert rows and all(r[1] in METRIC_NAMES for r in rows)


def test_unknown_metric_is_rejected():
    with pytest.raises(ValueError):
        ensemble_metrics(["bogus"], echo_pair(), [run_once(echo_pair(), 0).trace])

