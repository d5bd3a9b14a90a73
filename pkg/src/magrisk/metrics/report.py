"""Structured metric reports and flat plot-data tables."""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from magrisk.core.events import trace_digest
from magrisk.core.scenario import SETTING_EXPOSURE, FailureMode, ScenarioSpec
from magrisk.engine.ensemble import EnsembleResult

# metric name -> failure mode it speaks to, for ordering summaries
METRIC_MODES: dict[str, FailureMode] = {
    "cascade": FailureMode.CASCADING_RELIABILITY,
    "sensitivity": FailureMode.CASCADING_RELIABILITY,
    "ambiguity": FailureMode.COMMUNICATION,
    "ignored_requests": FailureMode.COMMUNICATION,
    "similarity": FailureMode.MONOCULTURE,
    "entropy": FailureMode.MONOCULTURE,
    "abandonment": FailureMode.CONFORMITY,
    "disagreement": FailureMode.CONFORMITY,
    "tom": FailureMode.THEORY_OF_MIND,
    "coordination": FailureMode.MIXED_MOTIVE,
    "pareto": FailureMode.MIXED_MOTIVE,
    "cooperation_index": FailureMode.MIXED_MOTIVE,
}


def table_text(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def write_table(path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
    path = Path(path)
    path.write_text(table_text(header, rows), encoding="utf-8")
    return path


def salient_order(spec: ScenarioSpec, metric_names: Sequence[str]) -> list[str]:
    """Metrics tied to the scenario's high-exposure failure modes come first."""
    modes = list(spec.failure_map)
    rank = {m: i for i, m in enumerate(modes)}

    def key(name: str):
        mode = METRIC_MODES.get(name)
        return (rank.get(mode, len(modes)) if mode else len(modes) + 1, name)

    return sorted(metric_names, key=key)


@dataclass
class MetricReport:
    scenario: str
    scenario_digest: str
    stage: str
    command: str
    config_digest: str
    ensemble: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    salient: list[str] = field(default_factory=list)
    exposure: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @classmethod
    def for_ensemble(
        cls,
        spec: ScenarioSpec,
        ens: EnsembleResult,
        stage: str,
        command: str,
        config_digest: str,
        metrics: dict | None = None,
    ) -> MetricReport:
        lo, hi = ens.interval
        summary = {
            "n": ens.n,
            "seeds": [ens.seeds[0], ens.seeds[-1]],
            "failures": ens.failures,
            "failure_rate": ens.failure_rate,
            "wilson_low": lo,
            "wilson_high": hi,
            "statuses": {s: ens.statuses.count(s) for s in sorted(set(ens.statuses))},
        }
        metrics = metrics or {}
        exposure = SETTING_EXPOSURE[spec.topology.kind]
        return cls(
            spec.name,
            spec.digest(),
            stage,
            command,
            config_digest,
            summary,
            metrics,
            salient_order(spec, list(metrics)),
            {m.value: level for m, level in exposure.items()},
        )

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_jsonable) + "\n"

    def summary_lines(self) -> list[str]:
        e = self.ensemble
        lines = [f"scenario {self.scenario} [{self.stage}]"]
        if e:
            lines.append(
                f"failure rate {e['failure_rate']:.4f} ({e['failures']}/{e['n']}), "
                f"95% Wilson [{e['wilson_low']:.4f}, {e['wilson_high']:.4f}]"
            )
        for name in self.salient:
            lines.append(f"  {name}: {json.dumps(self.metrics[name], sort_keys=True, default=_jsonable)}")
        return lines


def _jsonable(obj):
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if hasattr(obj, "value"):
        return obj.value
    raise TypeError(f"cannot serialise {type(obj).__name__}")


RUN_HEADER = ["command", "config_digest", "seed", "status", "failed", "trace_digest"]
SUMMARY_HEADER = ["command", "config_digest", "point", "n", "failures", "failure_rate", "wilson_low", "wilson_high"]


def run_rows(ens: EnsembleResult, command: str, config_digest: str) -> list[list]:
    rows = []
    for i, seed in enumerate(ens.seeds):
        digest = trace_digest(ens.runs[i].trace) if ens.runs else ""
        status = ens.statuses[i]
        rows.append([command, config_digest, seed, status, int(status != "Success"), digest])
    return rows


def summary_row(ens: EnsembleResult, command: str, config_digest: str, point: Any = "") -> list:
    lo, hi = ens.interval
    return [command, config_digest, point, ens.n, ens.failures, repr(ens.failure_rate), repr(lo), repr(hi)]


# -- ensemble-level metric computation ----------------------------------------

METRIC_NAMES = (
    "cascade",
    "ambiguity",
    "ignored_requests",
    "similarity",
    "entropy",
    "disagreement",
    "tom",
    "coordination",
)


def _responses(trace):
    from magrisk.core.events import MessageKind
    from magrisk.metrics.diversity import ResponseSet

    rs = ResponseSet.from_trace(trace, kind=MessageKind.VOTE)
    return rs if len(rs) else ResponseSet.from_trace(trace)


def _mean(values: Sequence[float]) -> float | None:
    values = [v for v in values if v is not None]
    return float(statistics.mean(values)) if values else None  # exact, so repeated 0.4 stays 0.4


def _run_metric(name: str, spec: ScenarioSpec, trace, judge=None) -> dict:
    from magrisk.judge import detect_ambiguity, detect_ignored_requests
    from magrisk.metrics.coordination import coordination_stats
    from magrisk.metrics.diversity import disagreement_rate, pairwise_similarity, response_entropy
    from magrisk.metrics.reliability import UnknownTaintLabel, cascade_stats
    from magrisk.metrics.tom import tom_score

    if name == "cascade":
        out = {}
        for inj in spec.injections:
            try:
                s = cascade_stats(trace, inj.label)
            except UnknownTaintLabel:
                continue
            out[inj.label] = {"agents_reached": s.agents_reached, "max_chain_depth": s.max_chain_depth}
        return out
    if name == "ambiguity":
        return {"flags": len(detect_ambiguity(trace.messages()))}
    if name == "ignored_requests":
        return {"flags": len(detect_ignored_requests(trace.messages()))}
    if name in ("similarity", "entropy", "disagreement"):
        rs = _responses(trace)
        if name == "entropy":
            return {"bits": response_entropy(rs)} if len(rs) else {}
        if len(rs) < 2:
            return {}
        if name == "similarity":
            return {"mean": pairwise_similarity(rs).mean_off_diagonal}
        return {"rate": disagreement_rate([i.content for i in rs.items])}
    if name == "tom":
        score = tom_score(trace)
        if score.no_data:
            return {}
        return {a: {"accuracy": s.accuracy, "brier": s.brier} for a, s in score.agents.items()}
    if name == "coordination":
        labels = spec.metadata.get("impasse_labels", ())
        s = coordination_stats(trace, labels, rounds=spec.protocol.rounds, judge=judge)
        return {
            "completed": float(s.task_completion),
            "time_to_success": s.time_to_success,
            "conflict_frequency": s.conflict_frequency,
        }
    raise ValueError(f"unknown metric {name!r}; known: {', '.join(METRIC_NAMES)}")


def _flatten(prefix: str, value, out: dict) -> None:
    if isinstance(value, dict):
        for k in sorted(value):
            _flatten(f"{prefix}.{k}" if prefix else str(k), value[k], out)
    else:
        out[prefix] = value


def ensemble_metrics(names: Sequence[str], spec: ScenarioSpec, traces: Sequence, judge=None):
    """Per-run metric values and their means over runs.

    Returns ``(summary, rows)`` where ``summary`` maps each metric to its
    flattened means and ``rows`` holds ``(seed, metric, field, value)``.
    """
    unknown = [n for n in names if n not in METRIC_NAMES]
    if unknown:
        raise ValueError(f"unknown metrics {unknown}; known: {', '.join(METRIC_NAMES)}")
    summary: dict[str, dict] = {}
    rows: list[tuple] = []
    for name in names:
        per_field: dict[str, list] = {}
        for trace in traces:
            flat: dict = {}
            _flatten("", _run_metric(name, spec, trace, judge), flat)
            for fld, v in flat.items():
                per_field.setdefault(fld, []).append(v)
                rows.append((trace.seed, name, fld, v))
        summary[name] = {fld: _mean(vs) for fld, vs in sorted(per_field.items())}
    return summary, rows
