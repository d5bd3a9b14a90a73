"""Command-line interface.

Exit codes: 0 ok, 1 replay divergence, 2 unparseable config, 3 invalid
config or scenario, 4 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import yaml

from magrisk.config import ConfigInvalid, ConfigParseError, ExperimentConfig, load_config
from magrisk.core.events import Trace, TraceError, content_hash, trace_digest
from magrisk.engine.ensemble import EnsembleResult, run_ensemble, wilson_interval
from magrisk.engine.runner import (
    DigestMismatch,
    Divergence,
    ProbeError,
    RunResult,
    RunStatus,
    ScenarioInvalid,
    probe_agent,
    replay,
)
from magrisk.inject import InjectionError, sweep
from magrisk.judge import (
    AnnotationError,
    AnnotationSet,
    ExternalJudge,
    JudgeKind,
    Ruleset,
    calibrate,
    classify,
)
from magrisk.metrics.report import (
    RUN_HEADER,
    SUMMARY_HEADER,
    MetricReport,
    ensemble_metrics,
    run_rows,
    summary_row,
    write_table,
)
from magrisk.scenarios import SCENARIO_NAMES, UnknownScenario, export_scenario, load_scenario

log = logging.getLogger("magrisk")

EXIT_OK, EXIT_DIVERGED, EXIT_PARSE, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# -- helpers -------------------------------------------------------------------


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(
        runs=getattr(args, "runs", None),
        seed_base=getattr(args, "seed_base", None),
        jobs=getattr(args, "jobs", None),
        output=getattr(args, "out", None),
    )


def _out_dir(cfg: ExperimentConfig, args) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else cfg.base_dir / cfg.output
    out.mkdir(parents=True, exist_ok=True)
    return out


def _judge(cfg_judge: dict, base_dir: Path):
    kind = JudgeKind(cfg_judge.get("kind", "RuleBased"))
    if kind is JudgeKind.RULE_BASED:
        ruleset = Ruleset.load(base_dir / cfg_judge["ruleset"]) if "ruleset" in cfg_judge else None
        return lambda msgs: classify(kind, msgs, ruleset=ruleset)
    cache = base_dir / cfg_judge["cache"] if "cache" in cfg_judge else None
    adapter = ExternalJudge.from_env(cache)
    return lambda msgs: classify(kind, msgs, adapter=adapter)


def _stamp(trace: Trace, command: str, digest: str) -> Trace:
    return Trace(trace.scenario_digest, trace.seed, trace.events, {**trace.meta, "command": command,
                                                                   "config_digest": digest})


def _ingest(paths: Sequence[str]) -> list[Trace]:
    traces = []
    for p in paths:
        path = Path(p)
        files = sorted(path.glob("*.jsonl")) if path.is_dir() else [path]
        for f in files:
            traces.append(Trace.load(f))
    if not traces:
        raise CliError("no traces found to ingest", EXIT_INVALID)
    return traces


def ensemble_from_traces(traces: Sequence[Trace]) -> EnsembleResult:
    runs, statuses = [], []
    for t in traces:
        if not t.ended:
            raise CliError(f"trace for seed {t.seed} is unterminated", EXIT_INVALID)
        end = t.events[-1].data
        status = RunStatus(end["status"])
        runs.append(RunResult(t, status, dict(end.get("milestones", {})), {}, end.get("reason", "")))
        statuses.append(status.value)
    failures = sum(s != RunStatus.SUCCESS.value for s in statuses)
    seeds = [t.seed for t in traces]
    return EnsembleResult(runs, seeds, failures, wilson_interval(failures, len(seeds)), True, statuses)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_manifest(out: Path, command: str, digest: str, files: Sequence[Path]) -> None:
    entries = {f.relative_to(out).as_posix(): hashlib.sha256(f.read_bytes()).hexdigest() for f in files}
    _write_json(out / "manifest.json", {"command": command, "config_digest": digest, "files": entries})


def _report(cfg: ExperimentConfig, ens: EnsembleResult, command: str, notes=()) -> tuple[MetricReport, list]:
    judge = _judge(cfg.judge, cfg.base_dir) if "coordination" in cfg.metrics else None
    summary, rows = ensemble_metrics(cfg.metrics, cfg.spec, [r.trace for r in ens.runs], judge)
    report = MetricReport.for_ensemble(cfg.spec, ens, cfg.stage.value, command, cfg.digest, summary)
    report.notes.extend(notes)
    return report, rows


def _emit_report(out: Path, report: MetricReport, rows: list, ens: EnsembleResult, command: str,
                 digest: str) -> list[Path]:
    files = [out / "report.json"]
    files[0].write_text(report.to_json(), encoding="utf-8")
    files.append(write_table(out / "summary.csv", SUMMARY_HEADER, [summary_row(ens, command, digest)]))
    files.append(write_table(out / "runs.csv", RUN_HEADER, run_rows(ens, command, digest)))
    metric_rows = [[command, digest, *r] for r in rows]
    files.append(write_table(out / "metrics.csv", ["command", "config_digest", "seed", "metric", "field", "value"],
                             metric_rows))
    return files


# -- commands ------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg, args)
    command, digest = "run", cfg.digest
    files: list[Path] = []
    notes = []
    if cfg.stage.executes:
        ens = run_ensemble(cfg.spec, n=cfg.runs, seed_base=cfg.seed_base, jobs=cfg.jobs)
        stamped = [_stamp(r.trace, command, digest) for r in ens.runs]
        ens.runs = [RunResult(t, r.status, r.milestones_hit, r.taint_report, r.reason) for t, r in zip(stamped, ens.runs)]
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for t in stamped:
            path = tdir / f"seed-{t.seed}.jsonl"
            t.save(path)
            files.append(path)
    else:
        ens = ensemble_from_traces(_ingest(cfg.traces))
        notes.append(f"{cfg.stage.value} stage: metrics computed over ingested traces; nothing was executed")
        foreign = sum(t.scenario_digest != cfg.spec.digest() for t in (r.trace for r in ens.runs))
        if foreign:
            notes.append(f"{foreign} ingested traces were recorded for a different scenario digest")
    report, rows = _report(cfg, ens, command, notes)
    files += _emit_report(out, report, rows, ens, command, digest)
    _write_manifest(out, command, digest, files)
    for line in report.summary_lines():
        print(line)
    print(f"artifacts written to {out}")
    return EXIT_OK


def _parse_values(text: str) -> list:
    return [yaml.safe_load(v) for v in text.split(",") if v.strip()]


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg, args)
    values = _parse_values(args.values)
    digest = content_hash({"config": cfg.digest, "label": args.label, "field": args.field, "values": values})
    command = "sweep"
    points = sweep(cfg.spec, args.label, args.field, values, cfg.runs, cfg.seed_base, cfg.jobs)
    rows = [summary_row(p.ensemble, command, digest, p.value) for p in points]
    files = [write_table(out / "sweep.csv", SUMMARY_HEADER, rows)]
    body = {
        "command": command,
        "config_digest": digest,
        "label": args.label,
        "field": args.field,
        "points": [{"value": p.value, "n": p.ensemble.n, "failures": p.ensemble.failures,
                    "failure_rate": p.ensemble.failure_rate, "interval": list(p.ensemble.interval)} for p in points],
    }
    _write_json(out / "sweep.json", body)
    files.append(out / "sweep.json")
    _write_manifest(out, command, digest, files)
    for p in points:
        lo, hi = p.ensemble.interval
        print(f"{args.field}={p.value}: failure rate {p.ensemble.failure_rate:.4f} [{lo:.4f}, {hi:.4f}]")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    annotations = AnnotationSet.load(args.annotations)
    kind = JudgeKind(args.judge)
    ruleset = Ruleset.load(args.ruleset) if args.ruleset else None
    adapter = ExternalJudge.from_env(args.cache) if kind is JudgeKind.EXTERNAL_ADAPTER else None
    report = calibrate(kind, annotations, ruleset=ruleset, adapter=adapter)
    digest = content_hash({
        "annotations": hashlib.sha256(Path(args.annotations).read_bytes()).hexdigest(),
        "judge": kind.value,
        "ruleset": (ruleset.digest() if ruleset else "default"),
    })
    kappa = "undefined" if not report.kappa_defined else f"{report.kappa:.4f}"
    print(f"n {report.n}  accuracy {report.accuracy:.4f}  kappa {kappa}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "calibration.json", {"command": "calibrate-judge", "config_digest": digest, **report.to_dict()})
        _write_manifest(out, "calibrate-judge", digest, [out / "calibration.json"])
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg, args)
    command, digest = "report", cfg.digest
    if args.traces:
        ens = ensemble_from_traces(_ingest(args.traces))
        notes = ["computed over recorded traces"]
    else:
        if not cfg.stage.executes:
            ens = ensemble_from_traces(_ingest(cfg.traces))
        else:
            ens = run_ensemble(cfg.spec, n=cfg.runs, seed_base=cfg.seed_base, jobs=cfg.jobs)
        notes = []
    report, rows = _report(cfg, ens, command, notes)
    files = _emit_report(out, report, rows, ens, command, digest)
    _write_manifest(out, command, digest, files)
    for line in report.summary_lines():
        print(line)
    return EXIT_OK


def cmd_replay(args) -> int:
    cfg = _config(args)
    code = EXIT_OK
    for path in args.traces:
        trace = Trace.load(path)
        recorded = trace.meta.get("config_digest")
        if recorded is not None and recorded != cfg.digest:
            raise CliError(f"{path}: recorded under config {recorded[:12]}, current config is {cfg.digest[:12]}",
                           EXIT_INVALID)
        try:
            fresh = replay(trace, cfg.spec)
        except Divergence as exc:
            print(f"{path}: DIVERGED at event {exc.index}")
            print(f"  recorded: {json.dumps(exc.expected, sort_keys=True)}")
            print(f"  replayed: {json.dumps(exc.actual, sort_keys=True)}")
            code = EXIT_DIVERGED
            continue
        print(f"{path}: identical ({len(fresh.trace.events)} events, digest {trace_digest(fresh.trace)[:16]})")
    return code


def cmd_probe(args) -> int:
    cfg = _config(args)
    answer = probe_agent(cfg.spec, args.seed, args.step, args.agent, args.question)
    print(answer)
    return EXIT_OK


def cmd_scenario(args) -> int:
    if args.action == "list":
        for name in SCENARIO_NAMES:
            print(f"{name}: {load_scenario(name).description}")
        return EXIT_OK
    if not args.name:
        raise CliError("scenario export needs a scenario name", EXIT_INVALID)
    path = Path(args.out or f"{args.name}.yaml")
    export_scenario(args.name, path, runs=args.runs or 100)
    print(f"wrote {path}")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magrisk", description="Multi-agent failure-mode simulation and metrics.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment config (YAML)")
        p.add_argument("--seed-base", type=int, default=None, help="first seed of the ensemble")
        p.add_argument("--runs", type=int, default=None, help="ensemble size")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--jobs", type=int, default=None, help="worker processes")

    p = sub.add_parser("run", help="run an ensemble and write traces, report and plot tables")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sweep one perturbation parameter")
    common(p)
    p.add_argument("--label", required=True, help="perturbation label")
    p.add_argument("--field", required=True, help="action field or 'probability'")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate-judge", help="score a judge against human annotations")
    p.add_argument("--annotations", required=True, help="CSV: trace_file,event_index,gold_label,annotator_id")
    p.add_argument("--judge", default="RuleBased", choices=[k.value for k in JudgeKind])
    p.add_argument("--ruleset", default=None, help="YAML ruleset for the rule-based judge")
    p.add_argument("--cache", default=None, help="response cache for the external judge")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("report", help="metric report over an ensemble or recorded traces")
    common(p)
    p.add_argument("--traces", nargs="*", default=None, help="trace files or directories to ingest")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("replay", help="re-execute traces and check they are reproduced exactly")
    common(p)
    p.add_argument("traces", nargs="+")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("probe", help="ask an agent a question mid-run")
    common(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--step", type=int, required=True)
    p.add_argument("--agent", required=True)
    p.add_argument("--question", required=True)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("scenario", help="list or export the shipped scenarios")
    p.add_argument("action", choices=["list", "export"])
    p.add_argument("name", nargs="?")
    p.add_argument("--out", default=None)
    p.add_argument("--runs", type=int, default=None)
    p.set_defaults(func=cmd_scenario)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ConfigInvalid as exc:
        for problem in exc.problems:
            print(f"invalid: {problem}", file=sys.stderr)
        return EXIT_INVALID
    except (ScenarioInvalid, DigestMismatch, UnknownScenario, AnnotationError, InjectionError, TraceError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ProbeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
